// Copyright 2026 The crashgen Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "crashgen/adversary/attack.hpp"
#include "crashgen/cluster/cluster.hpp"
#include "crashgen/lora/lora.hpp"
#include "crashgen/model/checkpoint.hpp"
#include "crashgen/pipeline/config.hpp"
#include "crashgen/policy/policy.hpp"
#include "crashgen/realism/realism.hpp"
#include "crashgen/scene/crash.hpp"
#include "crashgen/scene/fingerprint.hpp"
#include "crashgen/scene/generator.hpp"
#include "crashgen/scene/io.hpp"
#include "crashgen/sketch/sketch.hpp"
#include "crashgen/util/binary_io.hpp"
#include "crashgen/util/hash.hpp"

namespace crashgen::pipeline
{

namespace fs = std::filesystem;

/// An upstream artifact does not belong to the inputs this stage was asked to use.
class FingerprintMismatch : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class StageFailure : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

struct Paths
{
  fs::path root;

  explicit Paths(fs::path r) : root(std::move(r)) {}

  fs::path scenarios() const { return root / "scenarios"; }
  fs::path scenario_manifest() const { return root / "scenarios" / "manifest.jsonl"; }
  fs::path model() const { return root / "model.ckpt"; }
  fs::path curvature() const { return root / "curvature.ckpt"; }
  fs::path lora_adapter() const { return root / "lora_adapter.ckpt"; }
  fs::path lora_curvature() const { return root / "lora_curvature.ckpt"; }
  fs::path sketch_summary() const { return root / "sketch.json"; }
  fs::path calibration() const { return root / "calibration.json"; }
  fs::path attack_dir() const { return root / "attack"; }
  fs::path attack_manifest() const { return root / "attack" / "manifest.jsonl"; }
  fs::path attack_params() const { return root / "attack" / "params.bin"; }
  fs::path crashes() const { return root / "crashes.csv"; }
  fs::path clusters() const { return root / "clusters.json"; }
  fs::path evaluation() const { return root / "evaluation.json"; }
  fs::path report_dir() const { return root / "report"; }
  fs::path stage_record(const std::string & stage) const { return root / "stages" / (stage + ".json"); }
};

using Log = std::function<void(const std::string &)>;

inline Log quiet_log()
{
  return [](const std::string &) {};
}

// ---- file helpers ---------------------------------------------------------------

inline void ensure_dir(const fs::path & p)
{
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) {
    throw StageFailure("cannot create directory '" + p.string() + "': " + ec.message());
  }
}

inline std::string read_text(const fs::path & p)
{
  std::ifstream in(p, std::ios::binary);
  if (!in) {
    throw StageFailure("cannot read '" + p.string() + "'");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path & p, const std::string & text)
{
  std::ofstream out(p, std::ios::binary);
  if (!out) {
    throw StageFailure("cannot write '" + p.string() + "'");
  }
  out << text;
  if (!out) {
    throw StageFailure("failed writing '" + p.string() + "'");
  }
}

inline json read_json(const fs::path & p)
{
  try {
    return json::parse(read_text(p));
  } catch (const json::exception & e) {
    throw StageFailure("malformed JSON in '" + p.string() + "': " + e.what());
  }
}

inline void write_json(const fs::path & p, const json & j) { write_text(p, j.dump(2) + "\n"); }

inline std::vector<json> read_jsonl(const fs::path & p)
{
  std::vector<json> out;
  std::istringstream in(read_text(p));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) {
      out.push_back(json::parse(line));
    }
  }
  return out;
}

inline std::string file_hash(const fs::path & p)
{
  const std::string bytes = read_text(p);
  return util::Fingerprint{}.bytes(bytes.data(), bytes.size()).hex();
}

inline std::string key_of(const json & j) { return util::fingerprint_text(j.dump()); }

inline std::optional<json> stage_record(const Paths & paths, const std::string & stage)
{
  if (!fs::exists(paths.stage_record(stage))) {
    return std::nullopt;
  }
  return read_json(paths.stage_record(stage));
}

inline json require_record(const Paths & paths, const std::string & stage, const std::string & consumer)
{
  auto r = stage_record(paths, stage);
  if (!r) {
    throw StageFailure(consumer + ": missing output of stage '" + stage + "' in " + paths.root.string());
  }
  return *r;
}

inline void write_record(const Paths & paths, const std::string & stage, json record)
{
  ensure_dir(paths.root / "stages");
  record["stage"] = stage;
  write_json(paths.stage_record(stage), record);
}

inline bool is_cached(const PipelineConfig & cfg, const Paths & paths, const std::string & stage, const std::string & key)
{
  if (!cfg.cached) {
    return false;
  }
  const auto r = stage_record(paths, stage);
  return r && r->value("input_key", "") == key;
}

// ---- identities -----------------------------------------------------------------

inline std::string model_identity(const model::TrainState & st)
{
  util::Fingerprint fp;
  fp.text(st.model_fingerprint).text(st.dataset_fingerprint).values(st.theta);
  return fp.hex();
}

inline std::string curvature_identity(const sketch::SketchedCurvature & c)
{
  util::Fingerprint fp;
  fp.text(c.provenance.model_fingerprint).text(c.provenance.space).value(c.provenance.fraction);
  fp.values(c.U).values(c.D);
  return fp.hex();
}

// ---- loaders --------------------------------------------------------------------

inline std::vector<Scenario> load_split(const Paths & paths, const std::string & split)
{
  if (!fs::exists(paths.scenario_manifest())) {
    throw StageFailure("no scenario manifest at '" + paths.scenario_manifest().string() + "'; run gen first");
  }
  std::vector<Scenario> out;
  for (const auto & line : read_jsonl(paths.scenario_manifest())) {
    if (line.at("split").get<std::string>() != split) {
      continue;
    }
    const fs::path file = paths.root / line.at("path").get<std::string>();
    if (file_hash(file) != line.at("hash").get<std::string>()) {
      throw FingerprintMismatch("scenario file '" + file.string() + "' changed since it was generated");
    }
    try {
      out.push_back(io::read_scenario(file.string()));
    } catch (const std::exception & e) {
      throw StageFailure(e.what());
    }
  }
  return out;
}

struct LoadedModel
{
  model::BehaviorModel model;
  model::TrainState state;
  std::string identity;
};

inline LoadedModel load_trained(const Paths & paths)
{
  if (!fs::exists(paths.model())) {
    throw StageFailure("no model checkpoint at '" + paths.model().string() + "'; run train first");
  }
  auto ck = model::load_model(paths.model().string());
  LoadedModel lm{model::BehaviorModel(ck.config), std::move(ck.state), {}};
  lm.identity = model_identity(lm.state);
  return lm;
}

/// The trained model, the curvature for the configured space and, for LoRA, the adapter.
struct AttackContext
{
  LoadedModel lm;
  std::string space;
  sketch::SketchedCurvature curvature;
  std::optional<lora::LoraAdapter> adapter;

  std::string curvature_id() const { return curvature_identity(curvature); }
};

inline AttackContext load_attack_context(const Paths & paths, const std::string & space)
{
  AttackContext ctx{load_trained(paths), space, {}, std::nullopt};
  const fs::path cpath = space == "lora" ? paths.lora_curvature() : paths.curvature();
  if (!fs::exists(cpath)) {
    throw StageFailure("no curvature checkpoint at '" + cpath.string() + "'; run sketch first");
  }
  ctx.curvature = sketch::load_curvature(cpath.string());
  if (ctx.curvature.provenance.model_fingerprint != ctx.lm.identity || ctx.curvature.provenance.space != space) {
    throw FingerprintMismatch(
      "curvature '" + cpath.string() + "' was not sketched from the current model in the " + space + " space");
  }
  if (space == "lora") {
    if (!fs::exists(paths.lora_adapter())) {
      throw StageFailure("no LoRA adapter at '" + paths.lora_adapter().string() + "'; run sketch first");
    }
    try {
      ctx.adapter.emplace(lora::load_adapter(
        paths.lora_adapter().string(), ctx.lm.model, ctx.lm.state.theta, ctx.lm.identity));
    } catch (const std::runtime_error & e) {
      throw FingerprintMismatch(e.what());
    }
  }
  return ctx;
}

template <class F>
decltype(auto) with_space(const AttackContext & ctx, F && f)
{
  if (ctx.space == "lora") {
    return f(adversary::LoraSpace(*ctx.adapter));
  }
  return f(adversary::FullSpace(ctx.lm.model, ctx.lm.state.theta));
}

// ---- stages ---------------------------------------------------------------------

inline json cmd_gen(const PipelineConfig & cfg, const Log & log = quiet_log())
{
  const Paths paths(cfg.workdir);
  const json cj = to_json(cfg);
  const std::string key = key_of({{"gen", cj.at("gen")}, {"split", cj.at("split")}, {"seed", cfg.seed}});
  if (is_cached(cfg, paths, "gen", key)) {
    log("gen: cached");
    return *stage_record(paths, "gen");
  }
  std::vector<Scenario> data;
  try {
    data = generate_synthetic_dataset(cfg.gen, util::derive_seed(cfg.seed, "gen"));
  } catch (const std::exception & e) {
    throw StageFailure(std::string("gen: ") + e.what());
  }
  ensure_dir(paths.scenarios());
  for (const auto & entry : fs::directory_iterator(paths.scenarios())) {
    if (entry.path().extension() == ".json") {
      fs::remove(entry.path());
    }
  }
  std::ostringstream manifest;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto & s = data[i];
    const std::string rel = "scenarios/" + s.id() + ".json";
    try {
      io::write_scenario((paths.root / rel).string(), s);
    } catch (const std::exception & e) {
      throw StageFailure(std::string("gen: ") + e.what());
    }
    const char * split = i < cfg.split.train                                              ? "train"
                         : i < cfg.split.train + cfg.split.calibration                    ? "calibration"
                         : i < cfg.split.train + cfg.split.calibration + cfg.split.campaign ? "campaign"
                                                                                           : "extra";
    manifest << json{{"scenario_id", s.id()}, {"path", rel}, {"hash", file_hash(paths.root / rel)}, {"split", split}}.dump()
             << '\n';
  }
  write_text(paths.scenario_manifest(), manifest.str());
  json rec{
    {"input_key", key},
    {"count", data.size()},
    {"dataset_fingerprint", dataset_fingerprint(data)},
    {"manifest_hash", file_hash(paths.scenario_manifest())}};
  write_record(paths, "gen", rec);
  log("gen: wrote " + std::to_string(data.size()) + " scenarios");
  return rec;
}

inline json cmd_train(const PipelineConfig & cfg, const Log & log = quiet_log())
{
  const Paths paths(cfg.workdir);
  const json gen = require_record(paths, "gen", "train");
  const json cj = to_json(cfg);
  const std::string key = key_of(
    {{"manifest", gen.at("manifest_hash")}, {"model", cj.at("model")}, {"train", cj.at("train")}, {"seed", cfg.seed}});
  if (is_cached(cfg, paths, "train", key) && fs::exists(paths.model())) {
    log("train: cached");
    return *stage_record(paths, "train");
  }
  const auto data = load_split(paths, "train");
  const model::BehaviorModel m(cfg.model);
  model::TrainState st;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    st = model::train(m, model::prepare(m, data), cfg.train, util::derive_seed(cfg.seed, "train"));
  } catch (const std::exception & e) {
    throw StageFailure(std::string("train: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  model::save_model(paths.model().string(), m, st);
  json rec{
    {"input_key", key},
    {"model_identity", model_identity(st)},
    {"dataset_fingerprint", st.dataset_fingerprint},
    {"parameters", st.theta.size()},
    {"scenarios", data.size()},
    {"iterations", st.iterations},
    {"polish_steps", st.polish_steps},
    {"final_loss", st.loss_history.back()},
    {"grad_inf_norm", st.grad_inf_norm},
    {"tolerance", st.tolerance},
    {"seconds", secs}};
  write_record(paths, "train", rec);
  log("train: n=" + std::to_string(st.theta.size()) + " iterations=" + std::to_string(st.iterations));
  return rec;
}

inline json spectrum_json(const sketch::SketchedCurvature & c)
{
  const auto sp = sketch::spectrum(c);
  return {{"values", sp.values}, {"energy", sp.energy}};
}

inline json cmd_sketch(const PipelineConfig & cfg, const Log & log = quiet_log())
{
  const Paths paths(cfg.workdir);
  const LoadedModel lm = load_trained(paths);
  const json cj = to_json(cfg);
  const std::string key = key_of(
    {{"model", lm.identity},
     {"sketch", cj.at("sketch")},
     {"lora", cj.at("lora")},
     {"k_reject", cfg.realism.k_reject},
     {"seed", cfg.seed}});
  if (is_cached(cfg, paths, "sketch", key) && fs::exists(paths.curvature())) {
    log("sketch: cached");
    return *stage_record(paths, "sketch");
  }
  const auto data = model::prepare(lm.model, load_split(paths, "train"));
  if (data.fingerprint != lm.state.dataset_fingerprint) {
    throw FingerprintMismatch("sketch: the training split on disk is not the data the model was trained on");
  }
  const auto n = static_cast<Eigen::Index>(lm.state.theta.size());
  const Eigen::Index k = std::max({cfg.sketch.k, cfg.realism.k_reject, cfg.sketch.gip_k});
  const std::uint64_t seed = util::derive_seed(cfg.seed, "sketch");
  std::size_t hvp_calls = 0;
  const auto full_sketch = [&](const model::PreparedDataset & d, double fraction) {
    return sketch::sketch_curvature(
      [&](const Eigen::VectorXd & v) {
        ++hvp_calls;
        return model::hvp(lm.model, lm.state.theta, d, v);
      },
      n, k, seed, sketch::Provenance{lm.identity, "full", fraction}, cfg.sketch.s, cfg.sketch.l);
  };
  const auto full = full_sketch(data, 1.0);

  const auto adapter = lora::wrap(lm.model, lm.state.theta, cfg.lora.rank, cfg.lora.sigma, util::derive_seed(cfg.seed, "lora"));
  const Eigen::Index lk = std::max({cfg.sketch.lora_k, cfg.realism.k_reject, cfg.sketch.gip_k});
  const std::uint64_t lseed = util::derive_seed(cfg.seed, "lora-sketch");
  const auto lora_curv = lora::sketch_lora(adapter, data, lk, lseed);

  json gip = json::array();
  for (const double f : cfg.sketch.gip_fractions) {
    const auto count = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(f * static_cast<double>(data.size()))));
    double ov_full = 1.0;
    double ov_lora = 1.0;
    if (count < data.size()) {
      const auto part = model::subset(data, count);
      ov_full = sketch::gip_overlap(full, full_sketch(part, f), cfg.sketch.gip_k);
      ov_lora = sketch::gip_overlap(lora_curv, lora::sketch_lora(adapter, part, lk, lseed, f), cfg.sketch.gip_k);
    }
    gip.push_back({{"fraction", f}, {"scenarios", count}, {"overlap_full", ov_full}, {"overlap_lora", ov_lora}});
  }

  sketch::save_curvature(paths.curvature().string(), full);
  lora::save_adapter(paths.lora_adapter().string(), adapter, lm.identity);
  auto lc = lora_curv;
  lc.provenance.model_fingerprint = lm.identity;
  sketch::save_curvature(paths.lora_curvature().string(), lc);

  json summary{
    {"model_identity", lm.identity},
    {"curvature_identity", curvature_identity(full)},
    {"lora_curvature_identity", curvature_identity(lc)},
    {"n", n},
    {"k", full.rank()},
    {"s", full.s},
    {"l", full.l},
    {"hvp_calls", hvp_calls},
    {"spectrum", spectrum_json(full)},
    {"gip_k", cfg.sketch.gip_k},
    {"gip", gip},
    {"lora", {{"dim", adapter.dim()}, {"rank", adapter.rank()}, {"k", lc.rank()}, {"spectrum", spectrum_json(lc)}}}};
  write_json(paths.sketch_summary(), summary);
  json rec{
    {"input_key", key},
    {"curvature_identity", summary["curvature_identity"]},
    {"lora_curvature_identity", summary["lora_curvature_identity"]}};
  write_record(paths, "sketch", rec);
  log("sketch: rank " + std::to_string(full.rank()) + " in n=" + std::to_string(n) + ", LoRA dim " +
      std::to_string(adapter.dim()));
  return summary;
}

inline realism::RealismConstraint base_constraint(const AttackContext & ctx, Eigen::Index k_reject)
{
  const Eigen::VectorXd origin = ctx.space == "lora" ? Eigen::VectorXd::Zero(ctx.adapter->dim()) : ctx.lm.state.theta;
  try {
    return realism::make_constraint(origin, ctx.curvature, k_reject, 0.0);
  } catch (const std::invalid_argument & e) {
    throw StageFailure(e.what());
  }
}

inline json cmd_calibrate(const PipelineConfig & cfg, const Log & log = quiet_log())
{
  const Paths paths(cfg.workdir);
  const AttackContext ctx = load_attack_context(paths, cfg.space);
  const json cj = to_json(cfg);
  const json gen = require_record(paths, "gen", "calibrate-r");
  const std::string key = key_of(
    {{"curvature", ctx.curvature_id()},
     {"manifest", gen.at("manifest_hash")},
     {"realism", cj.at("realism")},
     {"attack", cj.at("attack")},
     {"lora", cj.at("lora")},
     {"space", cfg.space}});
  if (is_cached(cfg, paths, "calibrate-r", key) && fs::exists(paths.calibration())) {
    log("calibrate-r: cached");
    return read_json(paths.calibration());
  }
  json out{
    {"space", cfg.space},
    {"k_reject", cfg.realism.k_reject},
    {"curvature_identity", ctx.curvature_id()},
    {"model_identity", ctx.lm.identity}};
  if (cfg.realism.r) {
    out["r"] = *cfg.realism.r;
    out["source"] = "fixed";
    out["sweep"] = json::array();
  } else {
    const auto pool = load_split(paths, "calibration");
    std::vector<Scenario> set;
    std::vector<std::string> ids;
    with_space(ctx, [&](const auto & space) {
      for (const auto & s : pool) {
        if (adversary::collision_free_at_origin(space, std::vector<Scenario>{s})) {
          set.push_back(s);
          ids.push_back(s.id());
        }
      }
      return 0;
    });
    if (set.empty()) {
      throw StageFailure("calibrate-r: no calibration scenario is collision-free at r = 0");
    }
    const auto base = base_constraint(ctx, cfg.realism.k_reject);
    json sweep = json::array();
    const auto sweep_json = [&](const std::vector<adversary::CalibrationProbe> & probes) {
      for (const auto & p : probes) {
        sweep.push_back(
          {{"r", p.r},
           {"collision_fraction", p.collision_fraction},
           {"median_impact_speed", p.median_impact_speed},
           {"success", p.success}});
      }
    };
    try {
      const auto res = with_space(ctx, [&](const auto & space) {
        return adversary::calibrate_r(space, base, set, attack_config(cfg), calibration_config(cfg));
      });
      sweep_json(res.sweep);
      out["r"] = res.r;
    } catch (const adversary::CalibrationError & e) {
      sweep_json(e.sweep());
      throw StageFailure(std::string(e.what()) + "; sweep: " + sweep.dump());
    }
    out["source"] = "bisection";
    out["scenarios"] = ids;
    out["sweep"] = sweep;
  }
  write_json(paths.calibration(), out);
  write_record(paths, "calibrate-r", {{"input_key", key}, {"r", out["r"]}, {"calibration_hash", file_hash(paths.calibration())}});
  log("calibrate-r: r = " + std::to_string(out["r"].get<double>()) + " (" + out["source"].get<std::string>() + ")");
  return out;
}

inline json trajectory_file_json(const std::string & id, const Trajectory & t, std::size_t target)
{
  return {{"scenario_id", id}, {"dt", t.dt}, {"target_index", target}, {"positions", io::to_json(t)}};
}

inline json cmd_attack(const PipelineConfig & cfg, const Log & log = quiet_log())
{
  const Paths paths(cfg.workdir);
  const AttackContext ctx = load_attack_context(paths, cfg.space);
  const json gen = require_record(paths, "gen", "attack");
  double r = 0.0;
  std::string r_source;
  if (cfg.realism.r) {
    r = *cfg.realism.r;
    r_source = "fixed";
  } else {
    if (!fs::exists(paths.calibration())) {
      throw StageFailure("attack: no calibration at '" + paths.calibration().string() + "'; run calibrate-r or pass --r");
    }
    const json cal = read_json(paths.calibration());
    if (cal.at("curvature_identity").get<std::string>() != ctx.curvature_id() ||
        cal.at("space").get<std::string>() != cfg.space || cal.at("k_reject").get<Eigen::Index>() != cfg.realism.k_reject) {
      throw FingerprintMismatch("attack: calibration was computed for a different curvature, space or k_reject");
    }
    r = cal.at("r").get<double>();
    r_source = "calibration";
  }
  const json cj = to_json(cfg);
  const std::string key = key_of(
    {{"curvature", ctx.curvature_id()},
     {"manifest", gen.at("manifest_hash")},
     {"r", r},
     {"k_reject", cfg.realism.k_reject},
     {"attack", cj.at("attack")},
     {"lora", cj.at("lora")},
     {"policy", cj.at("policy")},
     {"space", cfg.space}});
  if (is_cached(cfg, paths, "attack", key) && fs::exists(paths.crashes())) {
    log("attack: cached");
    return *stage_record(paths, "attack");
  }
  const auto scenarios = load_split(paths, "campaign");
  auto constraint = base_constraint(ctx, cfg.realism.k_reject);
  constraint.r = r;
  const auto entries = with_space(ctx, [&](const auto & space) {
    return adversary::run_campaign(space, constraint, scenarios, attack_config(cfg));
  });

  ensure_dir(paths.attack_dir() / "traj");
  std::ostringstream manifest;
  std::vector<CrashRecord> records;
  std::vector<std::string> param_ids;
  std::vector<Eigen::VectorXd> params;
  std::size_t collided = 0;
  double max_radius_excess = 0.0;
  double max_subspace = 0.0;
  double max_abs_accel = 0.0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto & e = entries[i];
    const Scenario & s = scenarios[i];
    json line{{"scenario_id", e.scenario_id}, {"r", r}, {"space", cfg.space}};
    if (!e.result) {
      line["collided"] = false;
      line["error"] = e.error;
      manifest << line.dump() << '\n';
      continue;
    }
    const auto & res = *e.result;
    const std::string rel = "attack/traj/" + e.scenario_id + ".json";
    write_json(paths.root / rel, trajectory_file_json(e.scenario_id, res.adversary, res.target_index));
    double rex = 0.0;
    double sub = 0.0;
    for (std::size_t t = 0; t < res.loss_trace.size(); ++t) {
      rex = std::max(rex, res.radius_excess_trace[t]);
      sub = std::max(sub, res.subspace_trace[t]);
    }
    max_radius_excess = std::max(max_radius_excess, rex);
    max_subspace = std::max(max_subspace, sub);
    line["collided"] = res.collided;
    line["iterations"] = res.iterations;
    line["recorded_iterates"] = res.loss_trace.size();
    line["final_loss"] = res.final_loss();
    line["max_violation"] = res.max_violation();
    line["max_radius_excess"] = rex;
    line["max_subspace_violation"] = sub;
    line["perturbation_norm"] = (res.params - constraint.theta_star).norm();
    line["target_index"] = res.target_index;
    line["stop_reason"] = res.stop_reason;
    line["trajectory"] = rel;

    // counterfactual replay of the target against the perturbed adversary
    Scenario target_view = s;
    target_view.target_index = res.target_index;
    const auto plog = policy::replay(target_view, res.adversary, cfg.policy);
    double amax = 0.0;
    for (const auto & a : plog.accelerations) {
      amax = std::max(amax, a.cwiseAbs().maxCoeff());
    }
    max_abs_accel = std::max(max_abs_accel, amax);
    const bool braked = std::any_of(plog.modes.begin(), plog.modes.end(), [](policy::Mode m) { return m == policy::Mode::Brake; });
    line["mode"] = braked ? "Brake" : "Track";
    line["t_first_brake"] = plog.first_brake_time ? json(*plog.first_brake_time) : json(nullptr);
    line["max_abs_accel"] = amax;
    if (res.collided) {
      ++collided;
      const CrashRecord rec = featurize_crash(target_view, res.adversary, plog);
      line["crash"] = rec.collided;
      records.push_back(rec);
      param_ids.push_back(e.scenario_id);
      params.push_back(res.params);
    }
    manifest << line.dump() << '\n';
  }
  write_text(paths.attack_manifest(), manifest.str());
  {
    std::ostringstream csv;
    io::write_crash_csv(csv, records);
    write_text(paths.crashes(), csv.str());
  }
  {
    std::ofstream out(paths.attack_params(), std::ios::binary);
    util::write_header(
      out, json{{"kind", "attack-params"}, {"space", cfg.space}, {"dim", constraint.theta_star.size()}, {"ids", param_ids}});
    for (const auto & p : params) {
      util::write_f64_le(out, p.data(), static_cast<std::size_t>(p.size()));
    }
    if (!out) {
      throw StageFailure("failed writing '" + paths.attack_params().string() + "'");
    }
  }
  const double rate = scenarios.empty() ? 0.0 : static_cast<double>(collided) / static_cast<double>(scenarios.size());
  json rec{
    {"input_key", key},
    {"r", r},
    {"r_source", r_source},
    {"space", cfg.space},
    {"curvature_identity", ctx.curvature_id()},
    {"scenarios", scenarios.size()},
    {"collided", collided},
    {"collision_rate", rate},
    {"crashes_after_policy", std::count_if(records.begin(), records.end(), [](const CrashRecord & c) { return c.collided; })},
    {"max_radius_excess", max_radius_excess},
    {"max_subspace_violation", max_subspace},
    {"max_abs_accel", max_abs_accel},
    {"crashes_hash", file_hash(paths.crashes())},
    {"manifest_hash", file_hash(paths.attack_manifest())}};
  write_record(paths, "attack", rec);
  log("attack: " + std::to_string(collided) + "/" + std::to_string(scenarios.size()) + " collisions at r = " +
      std::to_string(r));
  return rec;
}

inline std::vector<CrashRecord> read_crashes(const Paths & paths)
{
  std::istringstream in(read_text(paths.crashes()));
  try {
    return io::read_crash_csv(in);
  } catch (const std::exception & e) {
    throw StageFailure(paths.crashes().string() + ": " + e.what());
  }
}

inline json cmd_cluster(const PipelineConfig & cfg, const Log & log = quiet_log())
{
  const Paths paths(cfg.workdir);
  const json att = require_record(paths, "attack", "cluster");
  if (file_hash(paths.crashes()) != att.at("crashes_hash").get<std::string>()) {
    throw FingerprintMismatch("cluster: crashes.csv changed since the attack stage wrote it");
  }
  const json cj = to_json(cfg);
  const std::string key = key_of({{"crashes", att.at("crashes_hash")}, {"cluster", cj.at("cluster")}, {"seed", cfg.seed}});
  if (is_cached(cfg, paths, "cluster", key) && fs::exists(paths.clusters())) {
    log("cluster: cached");
    return read_json(paths.clusters());
  }
  std::vector<CrashRecord> crashes;
  for (auto & r : read_crashes(paths)) {
    if (r.collided) {
      crashes.push_back(std::move(r));
    }
  }
  if (crashes.size() < 3) {
    throw StageFailure("cluster: need at least 3 crashes, found " + std::to_string(crashes.size()));
  }
  const auto fm = cluster::build_features(crashes, cfg.cluster.include_tr);
  std::vector<Eigen::Index> ks;
  for (Eigen::Index k = cfg.cluster.k_min; k <= std::min<Eigen::Index>(cfg.cluster.k_max, fm.rows() - 1); ++k) {
    ks.push_back(k);
  }
  cluster::KSelection sel;
  try {
    sel = cluster::select_k(fm.Z, ks, cfg.cluster.min_size_fraction, util::derive_seed(cfg.seed, "cluster"), cfg.cluster.restarts);
  } catch (const std::exception & e) {
    throw StageFailure(std::string("cluster: ") + e.what());
  }
  const double sil = cluster::silhouette(fm.Z, sel.clustering.assignments);
  const auto rep = cluster::render_report(crashes, sel.clustering.assignments, sil);
  json assign = json::array();
  for (std::size_t i = 0; i < crashes.size(); ++i) {
    assign.push_back({{"scenario_id", crashes[i].scenario_id}, {"cluster", rep.assignments[i]}});
  }
  json diag = json::array();
  for (const auto & d : sel.diagnostics) {
    diag.push_back(
      {{"k", d.k},
       {"silhouette", std::isnan(d.silhouette) ? json(nullptr) : json(d.silhouette)},
       {"min_cluster_size", d.min_cluster_size},
       {"feasible", d.feasible}});
  }
  json out{
    {"crashes_hash", att.at("crashes_hash")},
    {"k", sel.k},
    {"silhouette", sil},
    {"min_cluster_size", rep.min_cluster_size},
    {"min_size_required", sel.min_size_required},
    {"columns", fm.columns},
    {"feature_mean", std::vector<double>(fm.mean.data(), fm.mean.data() + fm.mean.size())},
    {"feature_std", std::vector<double>(fm.std.data(), fm.std.data() + fm.std.size())},
    {"missing_tr_policy", fm.missing_tr_policy},
    {"tr_fill", fm.tr_fill},
    {"assignments", assign},
    {"diagnostics", diag}};
  write_json(paths.clusters(), out);
  write_record(paths, "cluster", {{"input_key", key}, {"k", sel.k}, {"clusters_hash", file_hash(paths.clusters())}});
  log("cluster: k = " + std::to_string(sel.k) + " over " + std::to_string(crashes.size()) + " crashes");
  return out;
}

struct ParamsFile
{
  std::string space;
  std::vector<std::string> ids;
  std::vector<Eigen::VectorXd> params;
};

inline ParamsFile read_params(const Paths & paths)
{
  std::ifstream in(paths.attack_params(), std::ios::binary);
  if (!in) {
    throw StageFailure("cannot read '" + paths.attack_params().string() + "'");
  }
  const auto h = util::read_header(in);
  ParamsFile pf;
  pf.space = h.at("space").get<std::string>();
  pf.ids = h.at("ids").get<std::vector<std::string>>();
  const auto dim = h.at("dim").get<Eigen::Index>();
  for (std::size_t i = 0; i < pf.ids.size(); ++i) {
    Eigen::VectorXd p(dim);
    util::read_f64_le(in, p.data(), static_cast<std::size_t>(dim));
    pf.params.push_back(std::move(p));
  }
  return pf;
}

/// Curvature energy of the accepted perturbations against norm-matched random ones,
/// plus campaign-level policy statistics.
inline json cmd_evaluate(const PipelineConfig & cfg, const Log & log = quiet_log())
{
  const Paths paths(cfg.workdir);
  const json att = require_record(paths, "attack", "evaluate");
  const AttackContext ctx = load_attack_context(paths, att.at("space").get<std::string>());
  if (att.at("curvature_identity").get<std::string>() != ctx.curvature_id()) {
    throw FingerprintMismatch("evaluate: attack outputs were produced with a different curvature");
  }
  const std::string key = key_of({{"attack", att.at("manifest_hash")}, {"seed", cfg.seed}});
  if (is_cached(cfg, paths, "evaluate", key) && fs::exists(paths.evaluation())) {
    log("evaluate: cached");
    return read_json(paths.evaluation());
  }
  const auto data = model::prepare(ctx.lm.model, load_split(paths, "train"));
  if (data.fingerprint != ctx.lm.state.dataset_fingerprint) {
    throw FingerprintMismatch("evaluate: the training split on disk is not the data the model was trained on");
  }
  const auto hvp = [&](const Eigen::VectorXd & v) -> Eigen::VectorXd {
    if (ctx.space == "lora") {
      return lora::lora_hvp(*ctx.adapter, data, v);
    }
    return model::hvp(ctx.lm.model, ctx.lm.state.theta, data, v);
  };
  const Eigen::VectorXd origin = ctx.space == "lora" ? Eigen::VectorXd::Zero(ctx.adapter->dim()) : ctx.lm.state.theta;
  const ParamsFile pf = read_params(paths);
  json per = json::array();
  double sum_attack = 0.0;
  double sum_random = 0.0;
  std::size_t below = 0;
  for (std::size_t i = 0; i < pf.ids.size(); ++i) {
    const Eigen::VectorXd d = pf.params[i] - origin;
    auto rng = util::make_rng(cfg.seed, "evaluate-random", i);
    Eigen::VectorXd z = util::gaussian_vector(d.size(), rng);
    z *= d.norm() / z.norm();
    const double ea = d.dot(hvp(d));
    const double er = z.dot(hvp(z));
    sum_attack += ea;
    sum_random += er;
    below += ea <= er;
    per.push_back({{"scenario_id", pf.ids[i]}, {"norm", d.norm()}, {"energy_attack", ea}, {"energy_random", er}});
  }
  const double m = pf.ids.empty() ? 1.0 : static_cast<double>(pf.ids.size());
  std::size_t braked = 0;
  std::size_t replays = 0;
  for (const auto & line : read_jsonl(paths.attack_manifest())) {
    if (line.contains("mode")) {
      ++replays;
      braked += line.at("mode").get<std::string>() == "Brake";
    }
  }
  json out{
    {"attack_manifest_hash", att.at("manifest_hash")},
    {"space", ctx.space},
    {"r", att.at("r")},
    {"collision_rate", att.at("collision_rate")},
    {"collided", att.at("collided")},
    {"scenarios", att.at("scenarios")},
    {"crashes_after_policy", att.at("crashes_after_policy")},
    {"replays", replays},
    {"replays_with_brake", braked},
    {"max_abs_accel", att.at("max_abs_accel")},
    {"max_radius_excess", att.at("max_radius_excess")},
    {"max_subspace_violation", att.at("max_subspace_violation")},
    {"curvature_energy",
     {{"mean_attack", sum_attack / m}, {"mean_random", sum_random / m}, {"attack_below_random", below}, {"trials", pf.ids.size()}}},
    {"per_scenario", per}};
  write_json(paths.evaluation(), out);
  write_record(paths, "evaluate", {{"input_key", key}, {"evaluation_hash", file_hash(paths.evaluation())}});
  log("evaluate: mean curvature energy attack " + std::to_string(sum_attack / m) + " vs random " +
      std::to_string(sum_random / m));
  return out;
}

inline json cmd_report(const PipelineConfig & cfg, const Log & log = quiet_log())
{
  const Paths paths(cfg.workdir);
  const json clusters = read_json(paths.clusters());
  const json att = require_record(paths, "attack", "report");
  if (clusters.at("crashes_hash") != att.at("crashes_hash")) {
    throw FingerprintMismatch("report: clusters.json was built from a different crash file");
  }
  const json sk = read_json(paths.sketch_summary());
  const json ev = read_json(paths.evaluation());
  if (ev.at("attack_manifest_hash") != att.at("manifest_hash")) {
    throw FingerprintMismatch("report: evaluation.json is stale with respect to the attack stage");
  }
  std::vector<CrashRecord> crashes;
  for (auto & r : read_crashes(paths)) {
    if (r.collided) {
      crashes.push_back(std::move(r));
    }
  }
  std::map<std::string, int> label;
  for (const auto & a : clusters.at("assignments")) {
    label[a.at("scenario_id").get<std::string>()] = a.at("cluster").get<int>();
  }
  std::vector<int> assign;
  for (const auto & c : crashes) {
    const auto it = label.find(c.scenario_id);
    if (it == label.end()) {
      throw FingerprintMismatch("report: crash '" + c.scenario_id + "' has no cluster assignment");
    }
    assign.push_back(it->second);
  }
  const auto rep = cluster::render_report(crashes, assign, clusters.at("silhouette").get<double>());
  const fs::path dir = paths.report_dir();
  ensure_dir(dir);
  write_text(dir / "clusters.csv", rep.csv);

  std::ostringstream kcsv;
  kcsv << "k,silhouette,min_cluster_size\n";
  for (const auto & d : clusters.at("diagnostics")) {
    kcsv << d.at("k").get<long>() << ',' << (d.at("silhouette").is_null() ? std::string() : cluster::fmt(d.at("silhouette").get<double>()))
         << ',' << d.at("min_cluster_size").get<long>() << '\n';
  }
  write_text(dir / "k_selection.csv", kcsv.str());

  std::ostringstream spec;
  spec << "space,index,eigenvalue,energy\n";
  const auto spec_rows = [&](const char * space, const json & s) {
    const auto & v = s.at("values");
    const auto & e = s.at("energy");
    for (std::size_t i = 0; i < v.size(); ++i) {
      spec << space << ',' << i + 1 << ',' << cluster::fmt(v[i].get<double>()) << ',' << cluster::fmt(e[i].get<double>()) << '\n';
    }
  };
  spec_rows("full", sk.at("spectrum"));
  spec_rows("lora", sk.at("lora").at("spectrum"));
  write_text(dir / "spectrum.csv", spec.str());

  std::ostringstream gip;
  gip << "fraction,scenarios,overlap_full,overlap_lora\n";
  for (const auto & g : sk.at("gip")) {
    gip << cluster::fmt(g.at("fraction").get<double>()) << ',' << g.at("scenarios").get<long>() << ','
        << cluster::fmt(g.at("overlap_full").get<double>()) << ',' << cluster::fmt(g.at("overlap_lora").get<double>()) << '\n';
  }
  write_text(dir / "gip.csv", gip.str());

  std::ostringstream feat;
  feat << "scenario_id,cluster,v_a,dvx,dvy,gamma,crash_type,responded,t_r\n";
  for (std::size_t i = 0; i < crashes.size(); ++i) {
    const auto & c = crashes[i];
    feat << c.scenario_id << ',' << rep.assignments[i] << ',' << cluster::fmt(c.v_a) << ',' << cluster::fmt(c.dvx) << ','
         << cluster::fmt(c.dvy) << ',' << cluster::fmt(c.gamma) << ',' << (c.crash_type ? to_string(*c.crash_type) : "") << ','
         << (c.responded ? "true" : "false") << ',' << (c.t_r ? cluster::fmt(*c.t_r) : std::string()) << '\n';
  }
  write_text(dir / "cluster_features.csv", feat.str());

  std::ostringstream txt;
  txt << "Counterfactual crash clusters (k = " << rep.k << ", " << crashes.size() << " crashes)\n\n" << rep.text << '\n';
  char buf[256];
  std::snprintf(
    buf, sizeof buf, "campaign: %d/%d collisions (%.0f%%) at r = %.6g in the %s space\n",
    ev.at("collided").get<int>(), ev.at("scenarios").get<int>(), 100.0 * ev.at("collision_rate").get<double>(),
    ev.at("r").get<double>(), ev.at("space").get<std::string>().c_str());
  txt << buf;
  std::snprintf(
    buf, sizeof buf, "after policy replay: %d crashes, %d of %d replays braked\n",
    ev.at("crashes_after_policy").get<int>(), ev.at("replays_with_brake").get<int>(), ev.at("replays").get<int>());
  txt << buf;
  const auto & ce = ev.at("curvature_energy");
  std::snprintf(
    buf, sizeof buf, "curvature energy of accepted perturbations: %.4g (norm-matched random: %.4g, %d/%d below)\n",
    ce.at("mean_attack").get<double>(), ce.at("mean_random").get<double>(), ce.at("attack_below_random").get<int>(),
    ce.at("trials").get<int>());
  txt << buf;
  txt << "GIP overlap with the full-data subspace (k = " << sk.at("gip_k").get<int>() << "):";
  for (const auto & g : sk.at("gip")) {
    std::snprintf(buf, sizeof buf, " %.0f%%: %.3f", 100.0 * g.at("fraction").get<double>(), g.at("overlap_full").get<double>());
    txt << buf;
  }
  txt << '\n';
  write_text(dir / "report.txt", txt.str());
  write_record(paths, "report", {{"input_key", key_of({{"clusters", file_hash(paths.clusters())}})}});
  log("report: wrote " + dir.string());
  return {{"k", rep.k}, {"crashes", crashes.size()}, {"dir", dir.string()}};
}

inline json run_all(const PipelineConfig & cfg, const Log & log = quiet_log())
{
  json out;
  out["gen"] = cmd_gen(cfg, log);
  out["train"] = cmd_train(cfg, log);
  cmd_sketch(cfg, log);
  out["calibrate-r"] = cmd_calibrate(cfg, log);
  out["attack"] = cmd_attack(cfg, log);
  out["cluster"] = cmd_cluster(cfg, log);
  out["evaluate"] = cmd_evaluate(cfg, log);
  out["report"] = cmd_report(cfg, log);
  return out;
}

}  // namespace crashgen::pipeline

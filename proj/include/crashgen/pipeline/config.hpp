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

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "crashgen/adversary/attack.hpp"
#include "crashgen/model/checkpoint.hpp"
#include "crashgen/policy/policy.hpp"
#include "crashgen/scene/generator.hpp"

namespace crashgen::pipeline
{

using nlohmann::json;

struct SplitConfig
{
  std::size_t train = 200;
  std::size_t calibration = 10;
  std::size_t campaign = 50;
};

struct SketchConfig
{
  Eigen::Index k = 32;  ///< rank kept from the full-space sketch
  Eigen::Index s = 0;   ///< 0: 2k
  Eigen::Index l = 0;   ///< 0: 2s + 1
  std::vector<double> gip_fractions{0.1, 0.25, 0.5, 1.0};
  Eigen::Index gip_k = 8;
  Eigen::Index lora_k = 16;
};

struct RealismConfig
{
  std::optional<double> r;  ///< fixed radius; calibrated when absent
  Eigen::Index k_reject = 32;
  adversary::CalibrationConfig calibration{4.0, 12, 0.9, 20.0};
};

/// B coordinates are scaled by A (entries of size sigma), so the LoRA space takes its
/// own step size and calibration range.
struct LoraConfig
{
  std::size_t rank = 4;
  double sigma = 0.02;
  double eta = 10.0;
  double r_max = 100.0;
};

struct ClusterConfig
{
  Eigen::Index k_min = 2;
  Eigen::Index k_max = 8;
  double min_size_fraction = 0.03;
  std::size_t restarts = 10;
  bool include_tr = true;
};

struct PipelineConfig
{
  std::string workdir = "work";
  std::uint64_t seed = 7;
  GenConfig gen = [] {
    GenConfig g;
    g.count = 260;
    return g;
  }();
  SplitConfig split;
  model::ModelConfig model;
  model::TrainConfig train;
  SketchConfig sketch;
  RealismConfig realism;
  adversary::AttackConfig attack = [] {
    adversary::AttackConfig a;
    a.eta = 0.1;
    a.max_iterations = 500;
    return a;
  }();
  std::string space = "full";
  LoraConfig lora;
  policy::PolicyConfig policy;
  ClusterConfig cluster;
  bool cached = false;
};

template <class T>
void read_opt(const json & j, const char * key, T & dst)
{
  if (j.contains(key) && !j.at(key).is_null()) {
    dst = j.at(key).get<T>();
  }
}

inline json to_json(const PipelineConfig & c)
{
  json templates = json::array();
  for (const auto t : c.gen.templates) {
    templates.push_back(to_string(t));
  }
  return json{
    {"workdir", c.workdir},
    {"seed", c.seed},
    {"gen",
     {{"count", c.gen.count},
      {"templates", templates},
      {"min_agents", c.gen.min_agents},
      {"max_agents", c.gen.max_agents},
      {"steps", c.gen.steps},
      {"dt", c.gen.dt},
      {"lane_width", c.gen.lane_width},
      {"speed_noise", c.gen.speed_noise},
      {"clearance", c.gen.clearance},
      {"reach_distance", c.gen.reach_distance}}},
    {"split", {{"train", c.split.train}, {"calibration", c.split.calibration}, {"campaign", c.split.campaign}}},
    {"model", model::config_to_json(c.model)},
    {"train",
     {{"max_iterations", c.train.max_iterations},
      {"history", c.train.history},
      {"polish_iterations", c.train.polish_iterations},
      {"tolerance", c.train.tolerance ? json(*c.train.tolerance) : json(nullptr)}}},
    {"sketch",
     {{"k", c.sketch.k},
      {"s", c.sketch.s},
      {"l", c.sketch.l},
      {"gip_fractions", c.sketch.gip_fractions},
      {"gip_k", c.sketch.gip_k},
      {"lora_k", c.sketch.lora_k}}},
    {"realism",
     {{"r", c.realism.r ? json(*c.realism.r) : json(nullptr)},
      {"k_reject", c.realism.k_reject},
      {"r_max", c.realism.calibration.r_max},
      {"bisection_steps", c.realism.calibration.bisection_steps},
      {"success_fraction", c.realism.calibration.success_fraction},
      {"severity_cap", c.realism.calibration.severity_cap}}},
    {"attack",
     {{"eta", c.attack.eta},
      {"max_iterations", c.attack.max_iterations},
      {"tau", c.attack.tau},
      {"all_neighbors", c.attack.all_neighbors},
      {"backtracking", c.attack.backtracking}}},
    {"space", c.space},
    {"lora", {{"rank", c.lora.rank}, {"sigma", c.lora.sigma}, {"eta", c.lora.eta}, {"r_max", c.lora.r_max}}},
    {"policy",
     {{"d_min", c.policy.d_min},
      {"t_min", c.policy.t_min},
      {"a_max", c.policy.a_max},
      {"brake", c.policy.brake},
      {"horizon", c.policy.horizon}}},
    {"cluster",
     {{"k_min", c.cluster.k_min},
      {"k_max", c.cluster.k_max},
      {"min_size_fraction", c.cluster.min_size_fraction},
      {"restarts", c.cluster.restarts},
      {"include_tr", c.cluster.include_tr}}}};
}

/// Overlays the keys present in `j` on the defaults.
inline PipelineConfig config_from_json(const json & j)
{
  PipelineConfig c;
  read_opt(j, "workdir", c.workdir);
  read_opt(j, "seed", c.seed);
  read_opt(j, "space", c.space);
  if (j.contains("gen")) {
    const auto & g = j.at("gen");
    read_opt(g, "count", c.gen.count);
    if (g.contains("templates")) {
      c.gen.templates.clear();
      for (const auto & t : g.at("templates")) {
        c.gen.templates.push_back(scene_template_from_string(t.get<std::string>()));
      }
    }
    read_opt(g, "min_agents", c.gen.min_agents);
    read_opt(g, "max_agents", c.gen.max_agents);
    read_opt(g, "steps", c.gen.steps);
    read_opt(g, "dt", c.gen.dt);
    read_opt(g, "lane_width", c.gen.lane_width);
    read_opt(g, "speed_noise", c.gen.speed_noise);
    read_opt(g, "clearance", c.gen.clearance);
    read_opt(g, "reach_distance", c.gen.reach_distance);
  }
  if (j.contains("split")) {
    const auto & s = j.at("split");
    read_opt(s, "train", c.split.train);
    read_opt(s, "calibration", c.split.calibration);
    read_opt(s, "campaign", c.split.campaign);
  }
  if (j.contains("model")) {
    json m = model::config_to_json(c.model);
    m.merge_patch(j.at("model"));
    c.model = model::config_from_json(m);
  }
  if (j.contains("train")) {
    const auto & t = j.at("train");
    read_opt(t, "max_iterations", c.train.max_iterations);
    read_opt(t, "history", c.train.history);
    read_opt(t, "polish_iterations", c.train.polish_iterations);
    if (t.contains("tolerance") && !t.at("tolerance").is_null()) {
      c.train.tolerance = t.at("tolerance").get<double>();
    }
  }
  if (j.contains("sketch")) {
    const auto & s = j.at("sketch");
    read_opt(s, "k", c.sketch.k);
    read_opt(s, "s", c.sketch.s);
    read_opt(s, "l", c.sketch.l);
    read_opt(s, "gip_fractions", c.sketch.gip_fractions);
    read_opt(s, "gip_k", c.sketch.gip_k);
    read_opt(s, "lora_k", c.sketch.lora_k);
  }
  if (j.contains("realism")) {
    const auto & r = j.at("realism");
    if (r.contains("r") && !r.at("r").is_null()) {
      c.realism.r = r.at("r").get<double>();
    }
    read_opt(r, "k_reject", c.realism.k_reject);
    read_opt(r, "r_max", c.realism.calibration.r_max);
    read_opt(r, "bisection_steps", c.realism.calibration.bisection_steps);
    read_opt(r, "success_fraction", c.realism.calibration.success_fraction);
    read_opt(r, "severity_cap", c.realism.calibration.severity_cap);
  }
  if (j.contains("attack")) {
    const auto & a = j.at("attack");
    read_opt(a, "eta", c.attack.eta);
    read_opt(a, "max_iterations", c.attack.max_iterations);
    read_opt(a, "tau", c.attack.tau);
    read_opt(a, "all_neighbors", c.attack.all_neighbors);
    read_opt(a, "backtracking", c.attack.backtracking);
  }
  if (j.contains("lora")) {
    read_opt(j.at("lora"), "rank", c.lora.rank);
    read_opt(j.at("lora"), "sigma", c.lora.sigma);
    read_opt(j.at("lora"), "eta", c.lora.eta);
    read_opt(j.at("lora"), "r_max", c.lora.r_max);
  }
  if (j.contains("policy")) {
    const auto & p = j.at("policy");
    read_opt(p, "d_min", c.policy.d_min);
    read_opt(p, "t_min", c.policy.t_min);
    read_opt(p, "a_max", c.policy.a_max);
    read_opt(p, "brake", c.policy.brake);
    read_opt(p, "horizon", c.policy.horizon);
  }
  if (j.contains("cluster")) {
    const auto & k = j.at("cluster");
    read_opt(k, "k_min", c.cluster.k_min);
    read_opt(k, "k_max", c.cluster.k_max);
    read_opt(k, "min_size_fraction", c.cluster.min_size_fraction);
    read_opt(k, "restarts", c.cluster.restarts);
    read_opt(k, "include_tr", c.cluster.include_tr);
  }
  if (c.space != "full" && c.space != "lora") {
    throw std::invalid_argument("space must be 'full' or 'lora', got '" + c.space + "'");
  }
  return c;
}

/// Attack settings for the configured space.
inline adversary::AttackConfig attack_config(const PipelineConfig & c)
{
  adversary::AttackConfig a = c.attack;
  if (c.space == "lora") {
    a.eta = c.lora.eta;
  }
  return a;
}

inline adversary::CalibrationConfig calibration_config(const PipelineConfig & c)
{
  adversary::CalibrationConfig k = c.realism.calibration;
  if (c.space == "lora") {
    k.r_max = c.lora.r_max;
  }
  return k;
}

inline void validate(const PipelineConfig & c)
{
  const auto need = [](bool ok, const std::string & what) {
    if (!ok) {
      throw std::invalid_argument(what);
    }
  };
  need(c.space == "full" || c.space == "lora", "space must be 'full' or 'lora', got '" + c.space + "'");
  need(
    c.split.train + c.split.calibration + c.split.campaign <= c.gen.count,
    "split sizes exceed gen.count (" + std::to_string(c.gen.count) + ")");
  need(
    c.model.steps == c.gen.steps, "model.steps (" + std::to_string(c.model.steps) + ") must equal gen.steps (" +
                                    std::to_string(c.gen.steps) + ")");
  need(c.sketch.k > 0 && c.sketch.gip_k > 0 && c.sketch.lora_k > 0, "sketch ranks must be positive");
  need(c.sketch.s == 0 || c.sketch.s >= c.sketch.k, "sketch.s must be 0 or at least k");
  for (const double f : c.sketch.gip_fractions) {
    need(f > 0.0 && f <= 1.0, "gip fractions must lie in (0, 1]");
  }
  need(c.realism.k_reject > 0, "realism.k_reject must be positive");
  need(!c.realism.r || *c.realism.r >= 0.0, "realism.r must be non-negative");
  need(c.realism.calibration.r_max > 0.0, "realism.r_max must be positive");
  need(c.attack.eta > 0.0 && c.attack.tau > 0.0 && c.attack.max_iterations > 0, "attack eta, tau and max_iterations must be positive");
  need(
    c.lora.rank > 0 && c.lora.sigma > 0.0 && c.lora.eta > 0.0 && c.lora.r_max > 0.0,
    "lora rank, sigma, eta and r_max must be positive");
  need(c.cluster.k_min >= 2 && c.cluster.k_max >= c.cluster.k_min, "cluster k range must satisfy 2 <= k_min <= k_max");
  need(c.cluster.min_size_fraction >= 0.0 && c.cluster.min_size_fraction < 1.0, "cluster.min_size_fraction must be in [0, 1)");
  crashgen::validate(c.gen);
  adversary::validate(c.attack);
  policy::validate(c.policy);
}

}  // namespace crashgen::pipeline

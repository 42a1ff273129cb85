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

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "crashgen/pipeline/stages.hpp"

namespace cp = crashgen::pipeline;

namespace
{

enum Exit : int
{
  kOk = 0,
  kUsage = 1,
  kStageFailure = 2,
  kFingerprint = 3,
};

struct Overrides
{
  std::string config;
  std::optional<std::string> workdir;
  std::optional<std::uint64_t> seed;
  bool cached = false;
  std::optional<double> r;
  std::optional<long> k_reject;
  std::optional<double> tau;
  std::optional<double> eta;
  std::optional<int> max_iters;
  std::optional<std::string> space;
};

cp::PipelineConfig resolve(const Overrides & o)
{
  cp::PipelineConfig cfg;
  if (!o.config.empty()) {
    cfg = cp::config_from_json(cp::read_json(o.config));
  }
  if (o.workdir) cfg.workdir = *o.workdir;
  if (o.seed) cfg.seed = *o.seed;
  if (o.cached) cfg.cached = true;
  if (o.r) cfg.realism.r = *o.r;
  if (o.k_reject) cfg.realism.k_reject = *o.k_reject;
  if (o.space) cfg.space = *o.space;
  if (o.tau) cfg.attack.tau = *o.tau;
  if (o.eta) (cfg.space == "lora" ? cfg.lora.eta : cfg.attack.eta) = *o.eta;
  if (o.max_iters) cfg.attack.max_iterations = *o.max_iters;
  cp::validate(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"crashgen: counterfactual crash generation for planning policies"};
  app.require_subcommand(1);
  app.fallthrough();

  Overrides o;
  app.add_option("--config", o.config, "JSON config overlay")->check(CLI::ExistingFile);
  app.add_option("--workdir", o.workdir, "artifact directory");
  app.add_option("--seed", o.seed, "master seed");
  app.add_flag("--cached", o.cached, "skip stages whose inputs are unchanged");
  app.add_option("--r", o.r, "fixed realism radius (skips calibration)")->check(CLI::NonNegativeNumber);
  app.add_option("--k-reject", o.k_reject, "number of curvature directions removed")->check(CLI::PositiveNumber);
  app.add_option("--tau", o.tau, "softmin temperature")->check(CLI::PositiveNumber);
  app.add_option("--eta", o.eta, "attack step size in the selected space")->check(CLI::PositiveNumber);
  app.add_option("--max-iters", o.max_iters, "attack iteration budget")->check(CLI::PositiveNumber);
  app.add_option("--space", o.space, "adversary parameter space")->check(CLI::IsMember({"full", "lora"}));

  using Stage = cp::json (*)(const cp::PipelineConfig &, const cp::Log &);
  const std::pair<const char *, Stage> stages[] = {
    {"gen", cp::cmd_gen},
    {"train", cp::cmd_train},
    {"sketch", cp::cmd_sketch},
    {"calibrate-r", cp::cmd_calibrate},
    {"attack", cp::cmd_attack},
    {"cluster", cp::cmd_cluster},
    {"evaluate", cp::cmd_evaluate},
    {"report", cp::cmd_report},
    {"run-all", cp::run_all},
  };
  for (const auto & [name, fn] : stages) {
    app.add_subcommand(name)->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError & e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  cp::PipelineConfig cfg;
  try {
    cfg = resolve(o);
  } catch (const std::exception & e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return kUsage;
  }

  const cp::Log log = [](const std::string & line) { std::cerr << line << '\n'; };
  try {
    cp::ensure_dir(cfg.workdir);
    for (const auto & [name, fn] : stages) {
      if (app.got_subcommand(name)) {
        fn(cfg, log);
      }
    }
  } catch (const cp::FingerprintMismatch & e) {
    std::cerr << "fingerprint mismatch: " << e.what() << '\n';
    return kFingerprint;
  } catch (const std::exception & e) {
    std::cerr << "stage failed: " << e.what() << '\n';
    return kStageFailure;
  }
  return kOk;
}

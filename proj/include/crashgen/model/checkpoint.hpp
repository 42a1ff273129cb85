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

#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>

#include <json.hpp>

#include "crashgen/model/train.hpp"
#include "crashgen/util/binary_io.hpp"

namespace crashgen::model
{

inline nlohmann::json config_to_json(const ModelConfig & c)
{
  return {
    {"hidden", c.hidden},
    {"steps", c.steps},
    {"sigma_obs", c.sigma_obs},
    {"prior_precision", c.prior_precision},
    {"encoder",
     {{"neighbors", c.encoder.neighbors},
      {"lookahead", c.encoder.lookahead},
      {"position_scale", c.encoder.position_scale},
      {"velocity_scale", c.encoder.velocity_scale}}}};
}

inline ModelConfig config_from_json(const nlohmann::json & j)
{
  ModelConfig c;
  c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  c.steps = j.at("steps").get<std::size_t>();
  c.sigma_obs = j.at("sigma_obs").get<double>();
  c.prior_precision = j.at("prior_precision").get<double>();
  const auto & e = j.at("encoder");
  c.encoder.neighbors = e.at("neighbors").get<std::size_t>();
  c.encoder.lookahead = e.at("lookahead").get<std::vector<double>>();
  c.encoder.position_scale = e.at("position_scale").get<double>();
  c.encoder.velocity_scale = e.at("velocity_scale").get<double>();
  return c;
}

struct ModelCheckpoint
{
  ModelConfig config;
  TrainState state;
};

inline void save_model(const std::string & path, const BehaviorModel & model, const TrainState & st)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open '" + path + "' for writing");
  }
  nlohmann::json h{
    {"kind", "behavior-model"},
    {"widths", model.mlp().widths()},
    {"activation", "tanh"},
    {"config", config_to_json(model.config())},
    {"n", st.theta.size()},
    {"lambda", st.prior_precision},
    {"sigma_obs", model.config().sigma_obs},
    {"tol", st.tolerance},
    {"grad_inf_norm", st.grad_inf_norm},
    {"iterations", st.iterations},
    {"polish_steps", st.polish_steps},
    {"loss_history", st.loss_history},
    {"dataset_fingerprint", st.dataset_fingerprint},
    {"model_fingerprint", st.model_fingerprint}};
  util::write_header(out, h);
  util::write_f64_le(out, st.theta.data(), static_cast<std::size_t>(st.theta.size()));
}

inline ModelCheckpoint load_model(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open '" + path + "'");
  }
  const auto h = util::read_header(in);
  if (h.value("kind", "") != "behavior-model") {
    throw std::runtime_error(path + ": not a behavior-model checkpoint");
  }
  ModelCheckpoint ck;
  ck.config = config_from_json(h.at("config"));
  auto & st = ck.state;
  st.theta.resize(h.at("n").get<Eigen::Index>());
  util::read_f64_le(in, st.theta.data(), static_cast<std::size_t>(st.theta.size()));
  st.prior_precision = h.at("lambda").get<double>();
  st.tolerance = h.at("tol").get<double>();
  st.grad_inf_norm = h.at("grad_inf_norm").get<double>();
  st.iterations = h.at("iterations").get<std::size_t>();
  st.polish_steps = h.value("polish_steps", std::size_t{0});
  st.loss_history = h.at("loss_history").get<std::vector<double>>();
  st.dataset_fingerprint = h.at("dataset_fingerprint").get<std::string>();
  st.model_fingerprint = h.at("model_fingerprint").get<std::string>();
  const BehaviorModel m(ck.config);
  if (m.fingerprint() != st.model_fingerprint ||
      m.parameter_count() != static_cast<std::size_t>(st.theta.size())) {
    throw std::runtime_error(path + ": header does not describe the stored model");
  }
  return ck;
}

}  // namespace crashgen::model

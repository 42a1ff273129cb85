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
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "crashgen/model/behavior_model.hpp"
#include "crashgen/sketch/sketch.hpp"
#include "crashgen/util/binary_io.hpp"
#include "crashgen/util/rng.hpp"

namespace crashgen::lora
{

/// W~_l = W_l + B_l A_l on every weight matrix of the network. A_l (rank x fan_in) is
/// frozen; the flat LoRA vector holds the B_l (fan_out x rank, column-major) only.
class LoraAdapter
{
public:
  LoraAdapter(
    const model::BehaviorModel & model, Eigen::VectorXd theta_star, std::size_t rank, double sigma,
    std::uint64_t seed)
  : model_(&model), theta_star_(std::move(theta_star)), rank_(rank), sigma_(sigma), seed_(seed)
  {
    const auto & mlp = model.mlp();
    if (static_cast<std::size_t>(theta_star_.size()) != mlp.parameter_count()) {
      throw std::invalid_argument("LoraAdapter: parameter vector does not match the model");
    }
    if (rank == 0) {
      throw std::invalid_argument("LoraAdapter: rank must be positive");
    }
    auto rng = util::make_rng(seed, "lora-a");
    for (std::size_t l = 0; l < mlp.layer_count(); ++l) {
      if (rank >= std::min(mlp.fan_in(l), mlp.fan_out(l))) {
        throw std::invalid_argument(
          "LoraAdapter: rank " + std::to_string(rank) + " is not low-rank for layer " + std::to_string(l) + " (" +
          std::to_string(mlp.fan_out(l)) + "x" + std::to_string(mlp.fan_in(l)) + ")");
      }
      A_.push_back(sigma * util::gaussian_matrix(
                             static_cast<Eigen::Index>(rank), static_cast<Eigen::Index>(mlp.fan_in(l)), rng));
      offsets_.push_back(dim_);
      dim_ += mlp.fan_out(l) * rank;
    }
  }

  const model::BehaviorModel & model() const { return *model_; }
  const Eigen::VectorXd & theta_star() const { return theta_star_; }
  const std::vector<Eigen::MatrixXd> & A() const { return A_; }
  std::size_t rank() const { return rank_; }
  double sigma() const { return sigma_; }
  std::uint64_t seed() const { return seed_; }
  Eigen::Index dim() const { return static_cast<Eigen::Index>(dim_); }

  Eigen::Map<const Eigen::MatrixXd> B(const Eigen::VectorXd & b, std::size_t l) const
  {
    return {b.data() + offsets_[l], static_cast<Eigen::Index>(model_->mlp().fan_out(l)),
            static_cast<Eigen::Index>(rank_)};
  }

  /// Full parameter vector of the adapted network.
  Eigen::VectorXd theta(const Eigen::VectorXd & b) const
  {
    check(b);
    const auto & mlp = model_->mlp();
    Eigen::VectorXd th = theta_star_;
    for (std::size_t l = 0; l < mlp.layer_count(); ++l) {
      Eigen::Map<Eigen::MatrixXd> W(
        th.data() + mlp.weight_offset(l), static_cast<Eigen::Index>(mlp.fan_out(l)),
        static_cast<Eigen::Index>(mlp.fan_in(l)));
      W += B(b, l) * A_[l];
    }
    return th;
  }

  /// Chain rule from a full-parameter gradient to the B coordinates: dL/dB_l = G_l A_l^T.
  Eigen::VectorXd grad_b(const Eigen::VectorXd & g_theta) const
  {
    const auto & mlp = model_->mlp();
    Eigen::VectorXd g(static_cast<Eigen::Index>(dim_));
    for (std::size_t l = 0; l < mlp.layer_count(); ++l) {
      const auto G = mlp.weight(g_theta, l);
      Eigen::Map<Eigen::MatrixXd>(
        g.data() + offsets_[l], static_cast<Eigen::Index>(mlp.fan_out(l)), static_cast<Eigen::Index>(rank_)) =
        G * A_[l].transpose();
    }
    return g;
  }

private:
  void check(const Eigen::VectorXd & b) const
  {
    if (static_cast<std::size_t>(b.size()) != dim_) {
      throw std::invalid_argument(
        "LoRA vector has length " + std::to_string(b.size()) + ", expected " + std::to_string(dim_));
    }
    model::require_finite(b);
  }

  const model::BehaviorModel * model_;
  Eigen::VectorXd theta_star_;
  std::size_t rank_;
  double sigma_;
  std::uint64_t seed_;
  std::vector<Eigen::MatrixXd> A_;
  std::vector<std::size_t> offsets_;
  std::size_t dim_ = 0;
};

inline LoraAdapter wrap(
  const model::BehaviorModel & model, const Eigen::VectorXd & theta_star, std::size_t k_lora = 4,
  double sigma_lora = 0.02, std::uint64_t seed = 0)
{
  return LoraAdapter(model, theta_star, k_lora, sigma_lora, seed);
}

inline double lora_loss(
  const LoraAdapter & a, const model::PreparedDataset & data, const Eigen::VectorXd & b,
  Eigen::VectorXd * grad = nullptr)
{
  Eigen::VectorXd g;
  const double f = model::nll_loss(a.model(), a.theta(b), data, grad ? &g : nullptr);
  if (grad) {
    *grad = a.grad_b(g);
  }
  return f;
}

inline Eigen::VectorXd lora_gradient(const LoraAdapter & a, const model::PreparedDataset & data, const Eigen::VectorXd & b)
{
  Eigen::VectorXd g;
  lora_loss(a, data, b, &g);
  return g;
}

/// Hessian-vector product of the loss in B coordinates at B = 0.
inline Eigen::VectorXd lora_hvp(const LoraAdapter & a, const model::PreparedDataset & data, const Eigen::VectorXd & v)
{
  return model::fd_hvp(
    [&](const Eigen::VectorXd & b) { return lora_gradient(a, data, b); }, Eigen::VectorXd::Zero(a.dim()), v);
}

inline sketch::SketchedCurvature sketch_lora(
  const LoraAdapter & a, const model::PreparedDataset & data, Eigen::Index k, std::uint64_t seed, double fraction = 1.0)
{
  return sketch::sketch_curvature(
    [&](const Eigen::VectorXd & v) { return lora_hvp(a, data, v); }, a.dim(), k, seed,
    sketch::Provenance{a.model().fingerprint(), "lora", fraction});
}

inline void save_adapter(const std::string & path, const LoraAdapter & a, const std::string & base_fingerprint)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open '" + path + "' for writing");
  }
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto & A : a.A()) {
    shapes.push_back({A.rows(), A.cols()});
  }
  util::write_header(
    out, nlohmann::json{
           {"kind", "lora-adapter"},
           {"base_fingerprint", base_fingerprint},
           {"rank", a.rank()},
           {"sigma_lora", a.sigma()},
           {"seed", a.seed()},
           {"a_shapes", shapes}});
  for (const auto & A : a.A()) {
    util::write_f64_le(out, A.data(), static_cast<std::size_t>(A.size()));
  }
}

/// Rebuilds the adapter from its seed and checks the stored A factors bit for bit.
inline LoraAdapter load_adapter(
  const std::string & path, const model::BehaviorModel & model, const Eigen::VectorXd & theta_star,
  const std::string & base_fingerprint)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open '" + path + "'");
  }
  const auto h = util::read_header(in);
  if (h.value("kind", "") != "lora-adapter") {
    throw std::runtime_error(path + ": not a LoRA adapter checkpoint");
  }
  if (h.at("base_fingerprint").get<std::string>() != base_fingerprint) {
    throw std::runtime_error(path + ": adapter was built for a different base model");
  }
  LoraAdapter a(
    model, theta_star, h.at("rank").get<std::size_t>(), h.at("sigma_lora").get<double>(),
    h.at("seed").get<std::uint64_t>());
  for (const auto & A : a.A()) {
    Eigen::MatrixXd stored(A.rows(), A.cols());
    util::read_f64_le(in, stored.data(), static_cast<std::size_t>(stored.size()));
    if (stored != A) {
      throw std::runtime_error(path + ": stored A factors do not match their seed");
    }
  }
  return a;
}

}  // namespace crashgen::lora

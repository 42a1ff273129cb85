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

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crashgen/model/features.hpp"
#include "crashgen/model/hvp.hpp"
#include "crashgen/model/mlp.hpp"
#include "crashgen/scene/fingerprint.hpp"
#include "crashgen/scene/scenario.hpp"
#include "crashgen/util/hash.hpp"

namespace crashgen::model
{

struct ModelConfig
{
  EncoderConfig encoder{};
  std::vector<std::size_t> hidden{32, 32};
  std::size_t steps = 40;
  double sigma_obs = 0.5;         ///< observation noise std, m
  double prior_precision = 100.0;  ///< Gaussian weight prior precision
};

/// Feed-forward behaviour model: scene features -> per-step body-frame displacements,
/// accumulated from the adversary's true initial position.
class BehaviorModel
{
public:
  explicit BehaviorModel(ModelConfig cfg = {}) : cfg_(std::move(cfg))
  {
    if (cfg_.steps < 2) {
      throw std::invalid_argument("BehaviorModel: steps must be >= 2");
    }
    std::vector<std::size_t> widths{cfg_.encoder.dim()};
    widths.insert(widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    widths.push_back(2 * (cfg_.steps - 1));
    mlp_ = Mlp(std::move(widths));
  }

  const ModelConfig & config() const { return cfg_; }
  const Mlp & mlp() const { return mlp_; }
  std::size_t parameter_count() const { return mlp_.parameter_count(); }
  std::size_t steps() const { return cfg_.steps; }

  std::string fingerprint() const
  {
    util::Fingerprint fp;
    fp.text("behavior-model");
    for (const auto w : mlp_.widths()) {
      fp.value(static_cast<std::uint64_t>(w));
    }
    fp.value(cfg_.sigma_obs).value(cfg_.prior_precision);
    fp.value(static_cast<std::uint64_t>(cfg_.encoder.neighbors)).values(cfg_.encoder.lookahead);
    fp.value(cfg_.encoder.position_scale).value(cfg_.encoder.velocity_scale);
    return fp.hex();
  }

  Eigen::VectorXd initial_parameters(std::uint64_t seed) const
  {
    auto rng = util::make_rng(seed, "model-init");
    return mlp_.initial_parameters(rng);
  }

private:
  ModelConfig cfg_;
  Mlp mlp_;
};

inline void require_finite(const Eigen::VectorXd & theta)
{
  if (!theta.allFinite()) {
    throw std::invalid_argument("parameter vector contains non-finite entries");
  }
}

/// Everything needed to backpropagate a loss on the predicted positions into parameters.
struct PredictionTape
{
  BodyFrame frame;
  Mlp::Tape tape;
};

inline Trajectory predict(
  const BehaviorModel & model, const Eigen::VectorXd & theta, const Scenario & s, PredictionTape * tape = nullptr)
{
  require_finite(theta);
  const std::size_t T = model.steps();
  if (s.steps() != T) {
    throw std::invalid_argument(
      "predict: scenario '" + s.id() + "' has " + std::to_string(s.steps()) + " steps, model expects " +
      std::to_string(T));
  }
  const BodyFrame frame = body_frame(s);
  Mlp::Tape local;
  const Eigen::VectorXd out = model.mlp().forward(theta, encode_features(s, model.config().encoder), &local);

  Trajectory traj;
  traj.dt = s.dt();
  traj.positions.resize(static_cast<Eigen::Index>(T), 2);
  Vec2 p = s.adv_init.position;
  traj.positions.row(0) = p.transpose();
  for (std::size_t t = 1; t < T; ++t) {
    const auto k = static_cast<Eigen::Index>(2 * (t - 1));
    p += frame.rotate_out(Vec2{out(k), out(k + 1)});
    traj.positions.row(static_cast<Eigen::Index>(t)) = p.transpose();
  }
  if (tape) {
    tape->frame = frame;
    tape->tape = std::move(local);
  }
  return traj;
}

/// Gradient with respect to theta of sum_t <d_positions[t], positions[t]>.
inline Eigen::VectorXd pullback(
  const BehaviorModel & model, const Eigen::VectorXd & theta, const PredictionTape & tape,
  const Eigen::MatrixX2d & d_positions)
{
  const std::size_t T = model.steps();
  Eigen::MatrixXd d_out(static_cast<Eigen::Index>(2 * (T - 1)), 1);
  Vec2 acc = Vec2::Zero();
  for (std::size_t t = T - 1; t >= 1; --t) {
    acc += d_positions.row(static_cast<Eigen::Index>(t)).transpose();
    const Vec2 body = tape.frame.rotate_in(acc);
    d_out(static_cast<Eigen::Index>(2 * (t - 1)), 0) = body.x();
    d_out(static_cast<Eigen::Index>(2 * (t - 1) + 1), 0) = body.y();
  }
  return model.mlp().backward(theta, tape.tape, d_out);
}

/// Encoded features and body-frame regression targets of a dataset.
struct PreparedDataset
{
  Eigen::MatrixXd features;  ///< d_in x B
  Eigen::MatrixXd targets;   ///< 2(T-1) x B displacements
  Eigen::MatrixXd offsets;   ///< 2 x B, body-frame (initial state - first reference position)
  std::string fingerprint;

  std::size_t size() const { return static_cast<std::size_t>(features.cols()); }
};

inline PreparedDataset prepare(const BehaviorModel & model, const std::vector<Scenario> & data)
{
  if (data.empty()) {
    throw std::invalid_argument("prepare: dataset is empty");
  }
  const std::size_t T = model.steps();
  const auto B = static_cast<Eigen::Index>(data.size());
  PreparedDataset p;
  p.features.resize(static_cast<Eigen::Index>(model.config().encoder.dim()), B);
  p.targets.resize(static_cast<Eigen::Index>(2 * (T - 1)), B);
  p.offsets.resize(2, B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const Scenario & s = data[static_cast<std::size_t>(b)];
    if (s.steps() != T) {
      throw std::invalid_argument("prepare: scenario '" + s.id() + "' has the wrong number of steps");
    }
    const BodyFrame f = body_frame(s);
    p.features.col(b) = encode_features(s, model.config().encoder);
    p.offsets.col(b) = f.rotate_in(s.adv_init.position - s.adv_ref.at(0));
    for (std::size_t t = 1; t < T; ++t) {
      const Vec2 d = f.rotate_in(s.adv_ref.at(t) - s.adv_ref.at(t - 1));
      p.targets(static_cast<Eigen::Index>(2 * (t - 1)), b) = d.x();
      p.targets(static_cast<Eigen::Index>(2 * (t - 1) + 1), b) = d.y();
    }
  }
  p.fingerprint = dataset_fingerprint(data);
  return p;
}

/// Column subset of a prepared dataset (used for data-fraction curvature studies).
inline PreparedDataset subset(const PreparedDataset & p, std::size_t count)
{
  count = std::min(count, p.size());
  const auto c = static_cast<Eigen::Index>(count);
  PreparedDataset q;
  q.features = p.features.leftCols(c);
  q.targets = p.targets.leftCols(c);
  q.offsets = p.offsets.leftCols(c);
  q.fingerprint = p.fingerprint + ":" + std::to_string(count);
  return q;
}

/// Negative log posterior: Gaussian observation model on every predicted position plus a
/// Gaussian prior on the weights.
///   l(theta) = sum_s sum_t |pred_t - ref_t|^2 / (2 sigma^2) + lambda |theta|^2 / 2
inline double nll_loss(
  const BehaviorModel & model, const Eigen::VectorXd & theta, const PreparedDataset & data,
  Eigen::VectorXd * grad = nullptr)
{
  require_finite(theta);
  const std::size_t T = model.steps();
  const double inv_var = 1.0 / (model.config().sigma_obs * model.config().sigma_obs);
  Mlp::Tape tape;
  const Eigen::MatrixXd out = model.mlp().forward(theta, data.features, grad ? &tape : nullptr);
  const Eigen::MatrixXd resid = out - data.targets;

  double loss = 0.0;
  Eigen::MatrixXd d_out;
  if (grad) {
    d_out.resize(resid.rows(), resid.cols());
  }
  std::vector<Vec2> err(T);
  for (Eigen::Index b = 0; b < resid.cols(); ++b) {
    Vec2 e = data.offsets.col(b);
    err[0] = e;
    loss += 0.5 * inv_var * e.squaredNorm();
    for (std::size_t t = 1; t < T; ++t) {
      const auto k = static_cast<Eigen::Index>(2 * (t - 1));
      e += Vec2{resid(k, b), resid(k + 1, b)};
      err[t] = e;
      loss += 0.5 * inv_var * e.squaredNorm();
    }
    if (grad) {
      Vec2 acc = Vec2::Zero();
      for (std::size_t t = T - 1; t >= 1; --t) {
        acc += err[t];
        const auto k = static_cast<Eigen::Index>(2 * (t - 1));
        d_out(k, b) = inv_var * acc.x();
        d_out(k + 1, b) = inv_var * acc.y();
      }
    }
  }
  const double lambda = model.config().prior_precision;
  loss += 0.5 * lambda * theta.squaredNorm();
  if (grad) {
    *grad = model.mlp().backward(theta, tape, d_out);
    *grad += lambda * theta;
  }
  return loss;
}

inline Eigen::VectorXd nll_gradient(
  const BehaviorModel & model, const Eigen::VectorXd & theta, const PreparedDataset & data)
{
  Eigen::VectorXd g;
  nll_loss(model, theta, data, &g);
  return g;
}

inline double nll_loss(const BehaviorModel & model, const Eigen::VectorXd & theta, const std::vector<Scenario> & data)
{
  return nll_loss(model, theta, prepare(model, data));
}

/// Hessian-vector product of the negative log posterior.
inline Eigen::VectorXd hvp(
  const BehaviorModel & model, const Eigen::VectorXd & theta, const PreparedDataset & data, const Eigen::VectorXd & v)
{
  return fd_hvp([&](const Eigen::VectorXd & x) { return nll_gradient(model, x, data); }, theta, v);
}

}  // namespace crashgen::model

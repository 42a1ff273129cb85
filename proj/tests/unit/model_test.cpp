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

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "crashgen/model/checkpoint.hpp"
#include "crashgen/model/train.hpp"
#include "crashgen/scene/generator.hpp"
#include "support.hpp"

namespace crashgen::model
{
namespace
{

std::vector<Scenario> small_dataset(std::size_t count, std::size_t steps, std::uint64_t seed = 3)
{
  GenConfig g;
  g.count = count;
  g.steps = steps;
  return generate_synthetic_dataset(g, seed);
}

ModelConfig small_config(std::vector<std::size_t> hidden, std::size_t steps)
{
  ModelConfig c;
  c.hidden = std::move(hidden);
  c.steps = steps;
  c.encoder.neighbors = 2;
  c.encoder.lookahead = {20.0, 60.0};
  c.prior_precision = 1.0;
  return c;
}

double rel_err(const Eigen::VectorXd & a, const Eigen::VectorXd & b)
{
  return (a - b).norm() / std::max(1e-300, std::max(a.norm(), b.norm()));
}

TEST(Features, TranslationInvariant)
{
  for (const auto & s : small_dataset(5, 10)) {
    const auto moved = rigid_transform(s, 0.0, {100.0, -50.0});
    EXPECT_LE((encode_features(s) - encode_features(moved)).lpNorm<Eigen::Infinity>(), 1e-12);
    const auto turned = rigid_transform(s, 1.1, {-30.0, 7.0});
    EXPECT_LE((encode_features(s) - encode_features(turned)).lpNorm<Eigen::Infinity>(), 1e-12);
  }
}

TEST(Features, MissingNeighborsAreZero)
{
  auto s = test::scenario({test::line({0, 0}, {10, 0}, 10, 0.1)}, test::line({0, 4}, {10, 0}, 10, 0.1));
  s.refs.clear();
  const EncoderConfig cfg;
  const auto x = encode_features(s, cfg);
  EXPECT_EQ(x.segment(4, 4 * static_cast<Eigen::Index>(cfg.neighbors)).norm(), 0.0);
}

TEST(Features, NearestNeighborsMatchExhaustiveSort)
{
  std::vector<Trajectory> refs;
  const std::vector<Vec2> starts{{40, 0}, {-8, 3}, {15, -4}, {2, 20}, {-30, 1}};
  for (const auto & p : starts) {
    refs.push_back(test::line(p, {10, 0}, 10, 0.1));
  }
  const auto s = test::scenario(refs, test::line({0, 0}, {10, 0}, 10, 0.1));
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    d.emplace_back(starts[i].norm(), i);
  }
  std::sort(d.begin(), d.end());
  const auto nn = nearest_neighbors(s, 3);
  ASSERT_EQ(nn.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(nn[k], d[k].second);
  }
}

TEST(Predict, ZeroOutputLayerStaysAtStart)
{
  const BehaviorModel m(small_config({8, 8}, 10));
  const auto data = small_dataset(3, 10);
  Eigen::VectorXd theta = m.initial_parameters(1);
  const auto & mlp = m.mlp();
  const std::size_t last = mlp.layer_count() - 1;
  theta.segment(static_cast<Eigen::Index>(mlp.weight_offset(last)),
                static_cast<Eigen::Index>(mlp.fan_in(last) * mlp.fan_out(last) + mlp.fan_out(last)))
    .setZero();
  for (const auto & s : data) {
    const auto tr = predict(m, theta, s);
    for (std::size_t t = 0; t < tr.steps(); ++t) {
      EXPECT_EQ(tr.at(t), s.adv_init.position);
    }
  }
}

TEST(Predict, PureAndAnchored)
{
  const BehaviorModel m(small_config({8, 8}, 10));
  const auto s = small_dataset(1, 10)[0];
  const Eigen::VectorXd theta = m.initial_parameters(2);
  const auto a = predict(m, theta, s);
  const auto b = predict(m, theta, s);
  EXPECT_EQ(a.positions, b.positions);
  EXPECT_EQ(a.at(0), s.adv_init.position);
  Eigen::VectorXd bad = theta;
  bad(0) = std::nan("");
  EXPECT_THROW(predict(m, bad, s), std::invalid_argument);
}

TEST(Mlp, FlattenRoundTrip)
{
  const BehaviorModel m(small_config({5, 7}, 6));
  const Eigen::VectorXd theta = m.initial_parameters(3);
  EXPECT_EQ(m.mlp().flatten(m.mlp().unflatten(theta)), theta);
}

TEST(Loss, ZeroAtExactFitWithoutPrior)
{
  auto cfg = small_config({4}, 8);
  cfg.prior_precision = 0.0;
  const BehaviorModel m(cfg);
  const auto s = small_dataset(1, 8)[0];
  const auto p = prepare(m, {s});
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.parameter_count()));
  const std::size_t last = m.mlp().layer_count() - 1;
  theta.segment(static_cast<Eigen::Index>(m.mlp().bias_offset(last)), p.targets.rows()) = p.targets.col(0);
  EXPECT_NEAR(nll_loss(m, theta, p), 0.0, 1e-20);
  EXPECT_LE((predict(m, theta, s).positions - s.adv_ref.positions).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Loss, PriorVanishesAtOrigin)
{
  auto a = small_config({4}, 8);
  auto b = a;
  a.prior_precision = 0.0;
  b.prior_precision = 50.0;
  const auto data = small_dataset(4, 8);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(BehaviorModel(a).parameter_count()));
  EXPECT_EQ(nll_loss(BehaviorModel(a), zero, data), nll_loss(BehaviorModel(b), zero, data));
}

TEST(Loss, InvariantUnderRigidMotion)
{
  const BehaviorModel m(small_config({6}, 8));
  const auto data = small_dataset(4, 8);
  std::vector<Scenario> moved;
  for (const auto & s : data) {
    moved.push_back(rigid_transform(s, -2.3, {55.0, 12.0}));
  }
  const Eigen::VectorXd theta = m.initial_parameters(4);
  EXPECT_NEAR(nll_loss(m, theta, data), nll_loss(m, theta, moved), 1e-9 * nll_loss(m, theta, data));
}

TEST(Loss, GradientMatchesCentralDifferences)
{
  const BehaviorModel m(small_config({6, 5}, 8));
  const auto p = prepare(m, small_dataset(5, 8));
  const auto n = static_cast<Eigen::Index>(m.parameter_count());
  util::Rng rng(11);
  for (int probe = 0; probe < 5; ++probe) {
    const Eigen::VectorXd theta = 0.5 * util::gaussian_vector(n, rng);
    Eigen::VectorXd g;
    nll_loss(m, theta, p, &g);
    Eigen::VectorXd fd(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(theta(i)));
      Eigen::VectorXd a = theta;
      Eigen::VectorXd b = theta;
      a(i) += h;
      b(i) -= h;
      fd(i) = (nll_loss(m, a, p) - nll_loss(m, b, p)) / (2.0 * h);
    }
    EXPECT_LE(rel_err(g, fd), 1e-5) << "probe " << probe;
  }
}

TEST(Hvp, QuadraticIsExact)
{
  util::Rng rng(3);
  const Eigen::MatrixXd G = util::gaussian_matrix(12, 12, rng);
  const Eigen::MatrixXd A = G * G.transpose() + Eigen::MatrixXd::Identity(12, 12);
  const auto grad = [&](const Eigen::VectorXd & x) -> Eigen::VectorXd { return A * x; };
  const Eigen::VectorXd theta = util::gaussian_vector(12, rng);
  const Eigen::VectorXd v = util::gaussian_vector(12, rng);
  EXPECT_LE(rel_err(fd_hvp(grad, theta, v), A * v), 1e-7);
  EXPECT_EQ(fd_hvp(grad, theta, Eigen::VectorXd::Zero(12)).norm(), 0.0);
}

TEST(Hvp, LinearAndSymmetric)
{
  const BehaviorModel m(small_config({6, 5}, 8));
  const auto p = prepare(m, small_dataset(5, 8));
  const auto n = static_cast<Eigen::Index>(m.parameter_count());
  util::Rng rng(12);
  const Eigen::VectorXd theta = 0.3 * util::gaussian_vector(n, rng);
  for (int probe = 0; probe < 3; ++probe) {
    const Eigen::VectorXd u = util::gaussian_vector(n, rng);
    const Eigen::VectorXd v = util::gaussian_vector(n, rng);
    const Eigen::VectorXd hv = hvp(m, theta, p, v);
    EXPECT_LE(rel_err(hvp(m, theta, p, 3.5 * v), 3.5 * hv), 1e-6);
    const double a = u.dot(hv);
    const double b = v.dot(hvp(m, theta, p, u));
    EXPECT_LE(std::abs(a - b), 1e-5 * std::max(std::abs(a), std::abs(b)));
  }
}

// Dense least-squares oracle for a model without hidden layers: the loss is quadratic in
// theta, so the optimum solves (M^T M / sigma^2 + lambda I) theta = -M^T c / sigma^2.
TEST(Train, LinearModelMatchesRidgeNormalEquations)
{
  auto cfg = small_config({}, 6);
  cfg.prior_precision = 0.5;
  const BehaviorModel m(cfg);
  const auto p = prepare(m, small_dataset(24, 6));
  const auto & mlp = m.mlp();
  const auto n = static_cast<Eigen::Index>(m.parameter_count());
  const auto fi = static_cast<Eigen::Index>(mlp.fan_in(0));
  const auto fo = static_cast<Eigen::Index>(mlp.fan_out(0));
  const Eigen::Index T = 6;
  // position errors stacked: e_b = L (A_b theta - y_b) + offset_b over t = 1..T-1
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(2 * (T - 1), 2 * (T - 1));
  for (Eigen::Index t = 0; t < T - 1; ++t) {
    for (Eigen::Index u = 0; u <= t; ++u) {
      L.block(2 * t, 2 * u, 2, 2).setIdentity();
    }
  }
  const double inv_var = 1.0 / (cfg.sigma_obs * cfg.sigma_obs);
  Eigen::MatrixXd H = cfg.prior_precision * Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(p.size()); ++b) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(fo, n);
    for (Eigen::Index i = 0; i < fo; ++i) {
      for (Eigen::Index j = 0; j < fi; ++j) {
        A(i, static_cast<Eigen::Index>(mlp.weight_offset(0)) + j * fo + i) = p.features(j, b);
      }
      A(i, static_cast<Eigen::Index>(mlp.bias_offset(0)) + i) = 1.0;
    }
    Eigen::VectorXd c = -L * p.targets.col(b);
    for (Eigen::Index t = 0; t < T - 1; ++t) {
      c.segment(2 * t, 2) += p.offsets.col(b);
    }
    const Eigen::MatrixXd M = L * A;
    H += inv_var * M.transpose() * M;
    rhs -= inv_var * M.transpose() * c;
  }
  const Eigen::VectorXd oracle = H.ldlt().solve(rhs);
  TrainConfig tc;
  tc.tolerance = 1e-9;
  const auto st = train(m, p, tc, 5);
  EXPECT_LE(st.grad_inf_norm, 1e-9);
  EXPECT_LE(rel_err(st.theta, oracle), 1e-8);
}

TEST(Train, DeterministicAndStationary)
{
  const BehaviorModel m(small_config({6}, 8));
  const auto p = prepare(m, small_dataset(20, 8));
  const auto a = train(m, p, {}, 9);
  const auto b = train(m, p, {}, 9);
  EXPECT_EQ(a.theta, b.theta);
  EXPECT_LE(a.grad_inf_norm, a.tolerance);
  EXPECT_DOUBLE_EQ(a.tolerance, default_tolerance(m.parameter_count()));
  Eigen::VectorXd g;
  nll_loss(m, a.theta, p, &g);
  EXPECT_LE(g.lpNorm<Eigen::Infinity>(), a.tolerance);
  EXPECT_EQ(a.dataset_fingerprint, p.fingerprint);
}

TEST(Train, ErrorsCarryGradientNorm)
{
  const BehaviorModel m(small_config({6}, 8));
  const auto p = prepare(m, small_dataset(20, 8));
  TrainConfig tc;
  tc.max_iterations = 2;
  tc.polish_iterations = 0;
  try {
    train(m, p, tc, 1);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError & e) {
    EXPECT_GT(e.grad_inf_norm(), default_tolerance(m.parameter_count()));
  }
  EXPECT_THROW(train(m, subset(p, 10), {}, 1), std::invalid_argument);
}

TEST(Train, NewtonPolishFinishesStalledRun)
{
  const BehaviorModel m(small_config({6}, 8));
  const auto p = prepare(m, small_dataset(20, 8));
  TrainConfig tc;
  tc.max_iterations = 400;  // well short of what L-BFGS alone needs here
  const auto st = train(m, p, tc, 1);
  EXPECT_GT(st.polish_steps, 0u);
  EXPECT_LE(st.grad_inf_norm, st.tolerance);
}

TEST(Checkpoint, RoundTripIsBitExact)
{
  const BehaviorModel m(small_config({6}, 8));
  const auto p = prepare(m, small_dataset(20, 8));
  const auto st = train(m, p, {}, 2);
  const auto path = (std::filesystem::temp_directory_path() / "crashgen_model_test.ckpt").string();
  save_model(path, m, st);
  const auto ck = load_model(path);
  EXPECT_EQ(ck.state.theta, st.theta);
  EXPECT_EQ(ck.state.dataset_fingerprint, st.dataset_fingerprint);
  EXPECT_EQ(BehaviorModel(ck.config).fingerprint(), m.fingerprint());
  EXPECT_EQ(ck.state.grad_inf_norm, st.grad_inf_norm);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace crashgen::model

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
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crashgen/model/behavior_model.hpp"
#include "crashgen/util/lbfgs.hpp"
#include "crashgen/util/newton.hpp"

namespace crashgen::model
{

struct TrainConfig
{
  std::size_t max_iterations = 30000;
  std::size_t history = 20;
  std::optional<double> tolerance;  ///< gradient inf-norm; default 1e-6 * sqrt(n)
  std::size_t min_scenarios = 20;
  // L-BFGS can stall in narrow valleys short of the tolerance; a few damped Newton
  // steps on the dense Hessian finish the job when n is small enough to afford it.
  std::size_t polish_iterations = 20;
  std::size_t polish_max_dim = 8000;
};

/// Converged parameters together with what is needed to audit the stationarity claim.
struct TrainState
{
  Eigen::VectorXd theta;
  std::vector<double> loss_history;
  double prior_precision = 0.0;
  double tolerance = 0.0;
  double grad_inf_norm = 0.0;
  std::size_t iterations = 0;
  std::size_t polish_steps = 0;
  std::string dataset_fingerprint;
  std::string model_fingerprint;
};

class TrainingError : public std::runtime_error
{
public:
  TrainingError(const std::string & what, double grad_inf_norm)
  : std::runtime_error(what), grad_inf_norm_(grad_inf_norm)
  {
  }
  double grad_inf_norm() const { return grad_inf_norm_; }

private:
  double grad_inf_norm_;
};

inline double default_tolerance(std::size_t n) { return 1e-6 * std::sqrt(static_cast<double>(n)); }

/// Full-batch deterministic L-BFGS on the negative log posterior until the gradient
/// infinity norm falls below the tolerance.
inline TrainState train(
  const BehaviorModel & model, const PreparedDataset & data, const TrainConfig & cfg, std::uint64_t seed)
{
  if (data.size() < cfg.min_scenarios) {
    throw std::invalid_argument(
      "train: need at least " + std::to_string(cfg.min_scenarios) + " scenarios, got " + std::to_string(data.size()));
  }
  const double tol = cfg.tolerance.value_or(default_tolerance(model.parameter_count()));
  util::LbfgsOptions opt;
  opt.max_iterations = cfg.max_iterations;
  opt.history = cfg.history;
  opt.grad_tolerance = tol;
  const auto fg = [&](const Eigen::VectorXd & x, Eigen::VectorXd & g) { return nll_loss(model, x, data, &g); };
  auto res = util::lbfgs(fg, model.initial_parameters(seed), opt);
  std::size_t polish = 0;
  const auto n = static_cast<Eigen::Index>(model.parameter_count());
  if (!res.converged && cfg.polish_iterations > 0 && static_cast<std::size_t>(n) <= cfg.polish_max_dim) {
    util::NewtonOptions nopt;
    nopt.max_iterations = cfg.polish_iterations;
    nopt.grad_tolerance = tol;
    const auto hessian = [&](const Eigen::VectorXd & x) {
      Eigen::MatrixXd H(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        H.col(i) = hvp(model, x, data, Eigen::VectorXd::Unit(n, i));
      }
      return H;
    };
    auto nr = util::damped_newton(fg, hessian, res.x, nopt);
    polish = nr.iterations;
    if (nr.f <= res.f || nr.converged) {
      res.x = std::move(nr.x);
      res.g = std::move(nr.g);
      res.f = nr.f;
      res.trace.push_back(nr.f);
      res.converged = nr.converged;
      res.message = res.message + "; polish: " + nr.message;
    }
  }
  const double gnorm = res.g.lpNorm<Eigen::Infinity>();
  if (!res.converged) {
    throw TrainingError(
      "training did not converge (" + res.message + "): |grad|_inf = " + std::to_string(gnorm) + " > " +
        std::to_string(tol) + " after " + std::to_string(res.iterations) + " iterations",
      gnorm);
  }
  TrainState st;
  st.theta = std::move(res.x);
  st.loss_history = std::move(res.trace);
  st.prior_precision = model.config().prior_precision;
  st.tolerance = tol;
  st.grad_inf_norm = gnorm;
  st.iterations = res.iterations;
  st.polish_steps = polish;
  st.dataset_fingerprint = data.fingerprint;
  st.model_fingerprint = model.fingerprint();
  return st;
}

}  // namespace crashgen::model

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
#include <cmath>
#include <string>

#include <Eigen/Dense>

namespace crashgen::util
{

struct NewtonOptions
{
  std::size_t max_iterations = 20;
  double grad_tolerance = 1e-6;  ///< on the infinity norm of the gradient
  double initial_damping = 1e-3;
  std::size_t max_damping_tries = 30;
};

struct NewtonResult
{
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd g;
  std::size_t iterations = 0;
  bool converged = false;
  std::string message;
};

/// Levenberg-damped Newton on a dense Hessian, meant for finishing a quasi-Newton run
/// that stalled close to a stationary point. A step is taken when it lowers f or the
/// gradient norm; otherwise the damping grows tenfold.
template <class FG, class Hess>
NewtonResult damped_newton(FG && fg, Hess && hessian, Eigen::VectorXd x, const NewtonOptions & opt)
{
  NewtonResult res;
  res.x = std::move(x);
  res.f = fg(res.x, res.g);
  double mu = opt.initial_damping;
  const auto n = res.x.size();
  Eigen::VectorXd g_new;
  for (; res.iterations < opt.max_iterations; ++res.iterations) {
    const double gn = res.g.lpNorm<Eigen::Infinity>();
    if (gn <= opt.grad_tolerance) {
      break;
    }
    Eigen::MatrixXd H = hessian(res.x);
    H = 0.5 * (H + H.transpose()).eval();
    bool stepped = false;
    for (std::size_t t = 0; t < opt.max_damping_tries && !stepped; ++t) {
      Eigen::LLT<Eigen::MatrixXd> llt(H + mu * Eigen::MatrixXd::Identity(n, n));
      if (llt.info() != Eigen::Success) {
        mu = std::max(10.0 * mu, opt.initial_damping);
        continue;
      }
      const Eigen::VectorXd step = -llt.solve(res.g);
      const Eigen::VectorXd x_new = res.x + step;
      const double f_new = fg(x_new, g_new);
      if (std::isfinite(f_new) && (f_new <= res.f + 1e-12 * std::abs(res.f) || g_new.lpNorm<Eigen::Infinity>() < gn)) {
        res.x = x_new;
        res.f = f_new;
        res.g = g_new;
        mu = std::max(0.1 * mu, 1e-10);
        stepped = true;
      } else {
        mu *= 10.0;
      }
    }
    if (!stepped) {
      res.message = "no acceptable damped step";
      res.converged = false;
      return res;
    }
  }
  res.converged = res.g.lpNorm<Eigen::Infinity>() <= opt.grad_tolerance;
  res.message = res.converged ? "gradient tolerance reached" : "iteration limit reached";
  return res;
}

}  // namespace crashgen::util

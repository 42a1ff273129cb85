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
#include <cstddef>
#include <deque>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace crashgen::util
{

struct LbfgsOptions
{
  std::size_t max_iterations = 20000;
  std::size_t history = 20;
  double grad_tolerance = 1e-6;  ///< on the infinity norm of the gradient
  double c1 = 1e-4;
  double c2 = 0.9;
  std::size_t max_linesearch = 40;
};

struct LbfgsResult
{
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd g;
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  bool converged = false;
  std::vector<double> trace;
  std::string message;
};

namespace detail
{

struct LinePoint
{
  double a = 0.0;
  double f = 0.0;
  double d = 0.0;
};

/// Minimiser of the cubic interpolating (a, f, f') at both ends, kept inside the
/// middle 80% of the bracket; bisection when the cubic has no usable minimiser.
inline double cubic_step(const LinePoint & lo, const LinePoint & hi)
{
  const double a0 = std::min(lo.a, hi.a);
  const double a1 = std::max(lo.a, hi.a);
  const double d1 = lo.d + hi.d - 3.0 * (lo.f - hi.f) / (lo.a - hi.a);
  const double rad = d1 * d1 - lo.d * hi.d;
  double a = 0.5 * (a0 + a1);
  if (rad >= 0.0) {
    const double d2 = std::copysign(std::sqrt(rad), hi.a - lo.a);
    const double den = hi.d - lo.d + 2.0 * d2;
    if (std::abs(den) > 0.0) {
      a = hi.a - (hi.a - lo.a) * (hi.d + d2 - d1) / den;
    }
  }
  const double w = a1 - a0;
  if (!std::isfinite(a) || a < a0 + 0.1 * w || a > a1 - 0.1 * w) {
    a = 0.5 * (a0 + a1);
  }
  return a;
}

}  // namespace detail

/// Limited-memory BFGS with a strong-Wolfe line search. `fg(x, g)` returns f(x) and
/// writes the gradient into g. The sufficient-decrease test tolerates round-off sized
/// increases so the final iterations near a stationary point can still make progress.
template <class FG>
LbfgsResult lbfgs(FG && fg, Eigen::VectorXd x0, const LbfgsOptions & opt)
{
  LbfgsResult res;
  res.x = std::move(x0);
  res.f = fg(res.x, res.g);
  ++res.evaluations;
  res.trace.push_back(res.f);

  std::deque<Eigen::VectorXd> S;
  std::deque<Eigen::VectorXd> Y;
  std::deque<double> rho;

  Eigen::VectorXd x_new;
  Eigen::VectorXd g_new;
  double f_new = 0.0;
  for (; res.iterations < opt.max_iterations; ++res.iterations) {
    if (res.g.lpNorm<Eigen::Infinity>() <= opt.grad_tolerance) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      return res;
    }

    // two-loop recursion
    Eigen::VectorXd q = res.g;
    std::vector<double> alpha(S.size());
    for (std::size_t i = S.size(); i-- > 0;) {
      alpha[i] = rho[i] * S[i].dot(q);
      q -= alpha[i] * Y[i];
    }
    if (!S.empty()) {
      q *= S.back().dot(Y.back()) / Y.back().squaredNorm();
    } else {
      q /= std::max(1.0, res.g.norm());
    }
    for (std::size_t i = 0; i < S.size(); ++i) {
      const double beta = rho[i] * Y[i].dot(q);
      q += (alpha[i] - beta) * S[i];
    }
    Eigen::VectorXd dir = -q;
    double d0 = res.g.dot(dir);
    if (!(d0 < 0.0)) {
      S.clear();
      Y.clear();
      rho.clear();
      dir = -res.g / std::max(1.0, res.g.norm());
      d0 = res.g.dot(dir);
    }

    const double f0 = res.f;
    const double slack = 1e-13 * std::abs(f0);
    auto eval = [&](double a) {
      x_new = res.x + a * dir;
      f_new = fg(x_new, g_new);
      ++res.evaluations;
      return detail::LinePoint{a, f_new, g_new.dot(dir)};
    };
    auto armijo_fails = [&](const detail::LinePoint & p) { return p.f > f0 + opt.c1 * p.a * d0 + slack; };
    auto curvature_ok = [&](const detail::LinePoint & p) { return std::abs(p.d) <= -opt.c2 * d0; };

    bool found = false;
    detail::LinePoint prev{0.0, f0, d0};
    double a = 1.0;
    for (std::size_t ls = 0; ls < opt.max_linesearch && !found; ++ls) {
      detail::LinePoint cur = eval(a);
      detail::LinePoint lo;
      detail::LinePoint hi;
      bool zoom = false;
      if (!std::isfinite(cur.f) || armijo_fails(cur) || (ls > 0 && cur.f >= prev.f)) {
        lo = prev;
        hi = cur;
        zoom = true;
      } else if (curvature_ok(cur)) {
        found = true;
        break;
      } else if (cur.d >= 0.0) {
        lo = cur;
        hi = prev;
        zoom = true;
      }
      if (zoom) {
        for (std::size_t z = 0; z < opt.max_linesearch; ++z) {
          const double at = std::isfinite(hi.f) ? detail::cubic_step(lo, hi) : 0.5 * (lo.a + hi.a);
          const detail::LinePoint p = eval(at);
          if (armijo_fails(p) || p.f >= lo.f) {
            hi = p;
          } else {
            if (curvature_ok(p)) {
              found = true;
              break;
            }
            if (p.d * (hi.a - lo.a) >= 0.0) {
              hi = lo;
            }
            lo = p;
          }
          if (std::abs(hi.a - lo.a) < 1e-16 * std::max(1.0, lo.a)) {
            break;
          }
        }
        if (!found && lo.a > 0.0) {
          // accept the best sufficient-decrease point of the bracket
          eval(lo.a);
          found = true;
        }
        break;
      }
      prev = cur;
      a *= 2.0;
    }

    if (!found) {
      if (!S.empty()) {
        S.clear();
        Y.clear();
        rho.clear();
        continue;
      }
      res.message = "line search failed";
      return res;
    }

    Eigen::VectorXd s = x_new - res.x;
    Eigen::VectorXd y = g_new - res.g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      rho.push_back(1.0 / sy);
      if (S.size() > opt.history) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
    res.x = x_new;
    res.g = g_new;
    res.f = f_new;
    res.trace.push_back(res.f);
  }
  res.converged = res.g.lpNorm<Eigen::Infinity>() <= opt.grad_tolerance;
  res.message = res.converged ? "gradient tolerance reached" : "iteration limit reached";
  return res;
}

}  // namespace crashgen::util

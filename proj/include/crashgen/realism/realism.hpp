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

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "crashgen/sketch/sketch.hpp"

namespace crashgen::realism
{

/// { theta : |theta - theta_star|_2 <= r, P P^T (theta - theta_star) = 0 }.
struct RealismConstraint
{
  Eigen::VectorXd theta_star;
  Eigen::MatrixXd P;  ///< n x k, orthonormal columns
  double r = 0.0;
};

inline Eigen::MatrixXd select_projector(const sketch::SketchedCurvature & c, Eigen::Index k)
{
  if (k < 0 || k > c.rank()) {
    throw std::invalid_argument(
      "select_projector: k=" + std::to_string(k) + " exceeds curvature rank " + std::to_string(c.rank()));
  }
  return c.U.leftCols(k);
}

inline RealismConstraint make_constraint(
  Eigen::VectorXd theta_star, const sketch::SketchedCurvature & c, Eigen::Index k, double r)
{
  if (c.n() != theta_star.size()) {
    throw std::invalid_argument("make_constraint: curvature and parameters have different dimensions");
  }
  if (!(r >= 0.0)) {
    throw std::invalid_argument("make_constraint: radius must be non-negative");
  }
  return {std::move(theta_star), select_projector(c, k), r};
}

inline Eigen::VectorXd reject(const RealismConstraint & c, const Eigen::VectorXd & theta)
{
  const Eigen::VectorXd d = theta - c.theta_star;
  return theta - c.P * (c.P.transpose() * d);
}

inline Eigen::VectorXd clamp_ball(const RealismConstraint & c, const Eigen::VectorXd & theta)
{
  const Eigen::VectorXd d = theta - c.theta_star;
  const double norm = d.norm();
  if (norm <= c.r) {
    return theta;
  }
  return c.theta_star + (c.r / norm) * d;
}

/// Exact Euclidean projection onto the constraint set: radial scaling keeps the
/// rejected offset orthogonal to span(P).
inline Eigen::VectorXd project(const RealismConstraint & c, const Eigen::VectorXd & theta)
{
  return clamp_ball(c, reject(c, theta));
}

struct Violation
{
  double radius_excess = 0.0;  ///< max(0, |dtheta| - r)
  double subspace = 0.0;       ///< |P^T dtheta|_inf
};

inline Violation violation(const RealismConstraint & c, const Eigen::VectorXd & theta)
{
  const Eigen::VectorXd d = theta - c.theta_star;
  Violation v;
  v.radius_excess = std::max(0.0, d.norm() - c.r);
  v.subspace = c.P.cols() > 0 ? (c.P.transpose() * d).lpNorm<Eigen::Infinity>() : 0.0;
  return v;
}

}  // namespace crashgen::realism

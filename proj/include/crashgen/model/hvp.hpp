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
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

namespace crashgen::model
{

/// Hessian-vector product by central differences of a gradient oracle, with step
/// sqrt(eps) * (1 + |theta|) / |v|. A zero direction returns zero.
template <class GradFn>
Eigen::VectorXd fd_hvp(GradFn && grad, const Eigen::VectorXd & theta, const Eigen::VectorXd & v)
{
  const double vn = v.norm();
  if (vn == 0.0) {
    return Eigen::VectorXd::Zero(theta.size());
  }
  const double eps = std::sqrt(std::numeric_limits<double>::epsilon()) * (1.0 + theta.norm()) / vn;
  const Eigen::VectorXd plus = theta + eps * v;
  const Eigen::VectorXd minus = theta - eps * v;
  return (grad(plus) - grad(minus)) / (2.0 * eps);
}

}  // namespace crashgen::model

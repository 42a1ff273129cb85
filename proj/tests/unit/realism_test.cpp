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

#include <gtest/gtest.h>

#include "crashgen/realism/realism.hpp"

namespace crashgen::realism
{
namespace
{

sketch::SketchedCurvature from_dense(const Eigen::MatrixXd & H, Eigen::Index k)
{
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
  sketch::SketchedCurvature c;
  c.U = es.eigenvectors().rowwise().reverse().leftCols(k);
  c.D = es.eigenvalues().reverse().head(k);
  return c;
}

RealismConstraint random_constraint(Eigen::Index n, Eigen::Index k, double r, std::uint64_t seed)
{
  util::Rng rng(seed);
  const Eigen::MatrixXd G = util::gaussian_matrix(n, n, rng);
  return make_constraint(util::gaussian_vector(n, rng), from_dense(G * G.transpose(), k), k, r);
}

TEST(Projector, OrderedEigenvectors)
{
  const Eigen::Matrix3d H = Eigen::Vector3d(3.0, 2.0, 1.0).asDiagonal();
  const Eigen::MatrixXd P = select_projector(from_dense(H, 3), 2);
  const Eigen::MatrixXd PPt = P * P.transpose();
  Eigen::Matrix3d expect = Eigen::Matrix3d::Zero();
  expect(0, 0) = expect(1, 1) = 1.0;
  EXPECT_LE((PPt - expect).norm(), 1e-12);
  EXPECT_THROW(select_projector(from_dense(H, 2), 3), std::invalid_argument);
}

TEST(Projector, BeatsRandomSubspaces)
{
  util::Rng rng(4);
  const Eigen::Index n = 50;
  const Eigen::Index k = 5;
  for (int inst = 0; inst < 3; ++inst) {
    const Eigen::MatrixXd G = util::gaussian_matrix(n, n, rng);
    const Eigen::MatrixXd H = G * G.transpose();
    const Eigen::MatrixXd P = select_projector(from_dense(H, n), k);
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
    const double best = (H * (I - P * P.transpose())).operatorNorm();
    for (int trial = 0; trial < 50; ++trial) {
      const Eigen::MatrixXd Q = sketch::thin_q(util::gaussian_matrix(n, k, rng));
      EXPECT_GE((H * (I - Q * Q.transpose())).operatorNorm(), best - 1e-9);
    }
  }
}

TEST(Reject, FixedPointAndSpanRemoval)
{
  const auto c = random_constraint(20, 4, 1.0, 1);
  EXPECT_EQ(reject(c, c.theta_star), c.theta_star);
  const Eigen::VectorXd in_span = c.theta_star + c.P * Eigen::Vector4d(1.0, -2.0, 0.5, 3.0);
  EXPECT_LE((reject(c, in_span) - c.theta_star).norm(), 1e-12);
  util::Rng rng(9);
  const Eigen::VectorXd t = c.theta_star + util::gaussian_vector(20, rng);
  const Eigen::VectorXd once = reject(c, t);
  EXPECT_LE((c.P.transpose() * (once - c.theta_star)).norm(), 1e-12);
  EXPECT_LE((reject(c, once) - once).norm(), 1e-12);
}

TEST(Reject, FullRankRemovesEverything)
{
  const auto c = random_constraint(6, 6, 1.0, 2);
  util::Rng rng(3);
  EXPECT_LE((reject(c, c.theta_star + util::gaussian_vector(6, rng)) - c.theta_star).norm(), 1e-12);
}

TEST(ClampBall, InteriorAndRadialScaling)
{
  const auto c = random_constraint(10, 2, 0.8, 5);
  util::Rng rng(6);
  const Eigen::VectorXd u = util::gaussian_vector(10, rng).normalized();
  const Eigen::VectorXd inside = c.theta_star + 0.4 * u;
  EXPECT_EQ(clamp_ball(c, inside), inside);
  const Eigen::VectorXd out = clamp_ball(c, c.theta_star + 1.6 * u);
  EXPECT_NEAR((out - c.theta_star).norm(), 0.8, 1e-12);
  EXPECT_LE((out - (c.theta_star + 0.8 * u)).norm(), 1e-12);
}

TEST(Project, FeasibleUnchangedAndOnePassSuffices)
{
  const auto c = random_constraint(30, 5, 0.5, 7);
  util::Rng rng(8);
  const Eigen::VectorXd feasible = reject(c, c.theta_star + 0.1 * util::gaussian_vector(30, rng).normalized());
  EXPECT_LE((project(c, feasible) - feasible).norm(), 1e-15);
  for (int i = 0; i < 20; ++i) {
    const Eigen::VectorXd t = c.theta_star + 5.0 * util::gaussian_vector(30, rng);
    const Eigen::VectorXd p = project(c, t);
    const auto v = violation(c, p);
    EXPECT_LE(v.radius_excess, 1e-12);
    EXPECT_LE(v.subspace, 1e-12);
    // Euclidean projection: no feasible point on a grid of the ray is closer
    const Eigen::VectorXd q = reject(c, t);
    const Eigen::VectorXd dir = (q - c.theta_star).normalized();
    for (double s = 0.0; s <= c.r; s += c.r / 16.0) {
      EXPECT_GE((t - (c.theta_star + s * dir)).norm(), (t - p).norm() - 1e-9);
    }
  }
}

TEST(Constraint, RejectsBadInputs)
{
  sketch::SketchedCurvature c;
  c.U = Eigen::MatrixXd::Identity(4, 2);
  c.D = Eigen::Vector2d(1.0, 0.5);
  EXPECT_THROW(make_constraint(Eigen::VectorXd::Zero(5), c, 1, 1.0), std::invalid_argument);
  EXPECT_THROW(make_constraint(Eigen::VectorXd::Zero(4), c, 1, -1.0), std::invalid_argument);
  const auto k0 = make_constraint(Eigen::VectorXd::Zero(4), c, 0, 1.0);
  EXPECT_EQ(violation(k0, Eigen::VectorXd::Ones(4)).subspace, 0.0);
  EXPECT_NEAR(violation(k0, Eigen::VectorXd::Ones(4)).radius_excess, 1.0, 1e-15);
}

}  // namespace
}  // namespace crashgen::realism

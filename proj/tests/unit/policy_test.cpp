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

#include <cmath>

#include <gtest/gtest.h>

#include "crashgen/policy/policy.hpp"
#include "crashgen/scene/generator.hpp"
#include "support.hpp"

namespace crashgen::policy
{
namespace
{

TEST(Ttc, ParallelEqualVelocity)
{
  const auto r = ttc_and_distance({0, 0}, {10, 0}, {0, 5}, {10, 0}, 5.0, 1.0);
  EXPECT_TRUE(std::isinf(r.time_to_contact));
  EXPECT_NEAR(r.min_distance, 5.0, 1e-12);
}

TEST(Ttc, HeadOnMatchesFineTimeStepping)
{
  const double radius = Dims{}.half_diagonal() * 2.0;
  const Vec2 x{0, 0};
  const Vec2 v{5, 0};
  const Vec2 xi{50, 0};
  const Vec2 vi{-5, 0};
  const auto r = ttc_and_distance(x, v, xi, vi, 10.0, radius);
  double brute = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= 10000; ++k) {
    const double s = 1e-3 * k;
    if (((x + s * v) - (xi + s * vi)).norm() <= radius) {
      brute = s;
      break;
    }
  }
  EXPECT_NEAR(r.time_to_contact, brute, 1e-3);
  EXPECT_NEAR(r.time_to_contact, (50.0 - radius) / 10.0, 1e-12);
  EXPECT_NEAR(r.min_distance, 0.0, 1e-12);
}

TEST(Ttc, RecedingKeepsCurrentDistance)
{
  const auto r = ttc_and_distance({0, 0}, {-3, 0}, {10, 2}, {4, 1}, 5.0, 1.0);
  EXPECT_TRUE(std::isinf(r.time_to_contact));
  EXPECT_NEAR(r.min_distance, std::hypot(10.0, 2.0), 1e-12);
}

TEST(Ttc, AlreadyInContactIsImmediate)
{
  const auto r = ttc_and_distance({0, 0}, {1, 0}, {1, 0}, {0, 0}, 5.0, 3.0);
  EXPECT_EQ(r.time_to_contact, 0.0);
}

TEST(PolicyStep, OnReferenceFollowsExactly)
{
  const PolicyConfig cfg;
  const double dt = 0.25;
  const Vec2 v{10, 1};
  const Vec2 a_ref{1.5, -0.5};
  const auto c = policy_step({{0, 0}, v, {}}, v + a_ref * dt, {}, dt, cfg);
  EXPECT_EQ(c.mode, Mode::Track);
  EXPECT_NEAR((c.accel - a_ref).norm(), 0.0, 1e-12);
}

TEST(PolicyStep, CloseFastNeighborBrakes)
{
  const PolicyConfig cfg;
  const Vec2 v{10, 0};
  const auto c = policy_step({{0, 0}, v, {}}, v, {{{5.5, 0}, {0, 0}, {}}}, 0.25, cfg);
  EXPECT_EQ(c.mode, Mode::Brake);
  EXPECT_NEAR((c.accel + cfg.brake_decel() * v.normalized()).norm(), 0.0, 1e-12);
}

TEST(PolicyStep, NearlyStoppedBrakeComesToRest)
{
  const PolicyConfig cfg;
  const double dt = 0.25;
  const Vec2 v{0.3, 0.2};
  const auto c = policy_step({{0, 0}, v, {}}, v, {{{3, 0}, {0, 0}, {}}}, dt, cfg);
  ASSERT_EQ(c.mode, Mode::Brake);
  EXPECT_NEAR((v + c.accel * dt).norm(), 0.0, 1e-15);
  EXPECT_LE(c.accel.cwiseAbs().maxCoeff(), cfg.a_max);
}

TEST(PolicyStep, TrackingMatchesGridSearch)
{
  const PolicyConfig cfg;
  const double dt = 0.25;
  util::Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec2 x{util::uniform(rng, -5, 5), util::uniform(rng, -5, 5)};
    const Vec2 v{util::uniform(rng, -10, 10), util::uniform(rng, -10, 10)};
    const Vec2 x_ref{util::uniform(rng, -5, 5), util::uniform(rng, -5, 5)};
    const Vec2 v_ref{util::uniform(rng, -12, 12), util::uniform(rng, -12, 12)};
    const auto cost = [&](const Vec2 & a) {
      const Vec2 x1 = x + v * dt;
      const Vec2 v1 = v + a * dt;
      return (x1 - x_ref).squaredNorm() + cfg.velocity_weight * (v1 - v_ref).squaredNorm();
    };
    const auto c = policy_step({x, v, {}}, v_ref, {}, dt, cfg);
    double best = std::numeric_limits<double>::infinity();
    for (double ax = -cfg.a_max; ax <= cfg.a_max + 1e-9; ax += 0.01) {
      for (double ay = -cfg.a_max; ay <= cfg.a_max + 1e-9; ay += 0.01) {
        best = std::min(best, cost({ax, ay}));
      }
    }
    EXPECT_LE(cost(c.accel), best + 1e-4);
    EXPECT_GE(cost(c.accel), best - 1e-4);
    EXPECT_LE(c.accel.cwiseAbs().maxCoeff(), cfg.a_max);
  }
}

TEST(Replay, UnperturbedReferencesAreTrackedWithoutBraking)
{
  GenConfig gc;
  gc.count = 20;
  const PolicyConfig cfg;
  for (const auto & s : generate_synthetic_dataset(gc, 4)) {
    const auto log = replay(s, s.adv_ref, cfg);
    EXPECT_FALSE(log.first_brake_time.has_value()) << s.id();
    EXPECT_FALSE(log.impact_index.has_value()) << s.id();
    const auto & ref = s.target_ref();
    for (std::size_t t = 0; t < s.steps(); ++t) {
      EXPECT_LE((log.target.at(t) - ref.at(t)).norm(), 1e-6) << s.id() << " t=" << t;
    }
  }
}

// target drives +x at 10 m/s; the adversary is parked across the lane 60 m ahead
Scenario parked_fixture()
{
  const auto tgt = test::line({0, 0}, {10, 0}, 80, 0.1);
  auto s = test::scenario({tgt}, test::line({60, 0}, {0, 0}, 80, 0.1), 0, "parked");
  s.dims.back() = Dims{4.5, 2.0};
  return s;
}

TEST(Replay, ParkedObstacleTriggersEarlyBrake)
{
  const auto s = parked_fixture();
  const auto log = replay(s, s.adv_ref, PolicyConfig{});
  ASSERT_TRUE(log.first_brake_time.has_value());
  // contact radius 2 * 2.46 m; ttc < 1.5 s once the gap closes below ~19.9 m
  EXPECT_LT(*log.first_brake_time, 4.6);
  EXPECT_FALSE(log.impact_index.has_value());
}

TEST(Replay, ModesMatchPredicatesAndBoundsHold)
{
  const auto s = parked_fixture();
  const PolicyConfig cfg;
  const auto log = replay(s, s.adv_ref, cfg);
  for (std::size_t t = 0; t < log.commanded_steps(); ++t) {
    const std::vector<Kinematics> others{{s.adv_ref.at(t), step_velocity(s.adv_ref, t), s.adversary_dims()}};
    const bool th = threatened({log.positions[t], log.velocities[t], s.target_dims()}, others, cfg);
    EXPECT_EQ(log.modes[t] == Mode::Brake, th) << "t=" << t;
    EXPECT_LE(log.accelerations[t].cwiseAbs().maxCoeff(), cfg.a_max + 1e-12);
    if (log.modes[t] == Mode::Brake) {
      const double speed = log.velocities[t].norm();
      if (speed >= cfg.brake_decel() * s.dt()) {
        EXPECT_NEAR(log.accelerations[t].norm(), cfg.brake_decel(), 1e-12);
        EXPECT_NEAR(log.accelerations[t].dot(log.velocities[t]), -cfg.brake_decel() * speed, 1e-9);
      }
    }
  }
}

TEST(Replay, Deterministic)
{
  const auto s = parked_fixture();
  const auto a = replay(s, s.adv_ref, PolicyConfig{});
  const auto b = replay(s, s.adv_ref, PolicyConfig{});
  EXPECT_EQ(a.target.positions, b.target.positions);
  EXPECT_EQ(a.modes, b.modes);
  EXPECT_EQ(a.first_brake_time, b.first_brake_time);
}

TEST(Replay, BrakingReleasesWhenThreatClears)
{
  // a crossing vehicle passes in front of the target and leaves
  const double dt = 0.1;
  const auto tgt = test::line({0, 0}, {8, 0}, 80, dt);
  const auto adv = test::line({20, -30}, {0, 15}, 80, dt);
  const auto s = test::scenario({tgt}, adv);
  const auto log = replay(s, adv, PolicyConfig{});
  ASSERT_TRUE(log.first_brake_time.has_value());
  EXPECT_EQ(log.modes.back(), Mode::Track);
}

TEST(Replay, RejectsMismatchedAdversary)
{
  const auto s = parked_fixture();
  EXPECT_THROW(replay(s, test::line({0, 0}, {0, 0}, 10, 0.1), PolicyConfig{}), std::invalid_argument);
}

}  // namespace
}  // namespace crashgen::policy

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
#include <numbers>

#include <gtest/gtest.h>

#include "crashgen/policy/policy.hpp"
#include "crashgen/scene/crash.hpp"
#include "crashgen/scene/generator.hpp"
#include "crashgen/scene/io.hpp"
#include "support.hpp"

namespace crashgen
{
namespace
{

constexpr double kPi = std::numbers::pi;

// Dense point sampling of box a at 1 cm; true when any sample lies inside b.
bool sampled_overlap(const OrientedBox & a, const OrientedBox & b)
{
  const Vec2 fa{std::cos(a.heading), std::sin(a.heading)};
  const Vec2 la{-fa.y(), fa.x()};
  const Vec2 fb{std::cos(b.heading), std::sin(b.heading)};
  const Vec2 lb{-fb.y(), fb.x()};
  const double h = 0.01;
  for (double u = -0.5 * a.dims.length; u <= 0.5 * a.dims.length + 1e-12; u += h) {
    for (double w = -0.5 * a.dims.width; w <= 0.5 * a.dims.width + 1e-12; w += h) {
      const Vec2 p = a.center + u * fa + w * la - b.center;
      if (std::abs(p.dot(fb)) <= 0.5 * b.dims.length && std::abs(p.dot(lb)) <= 0.5 * b.dims.width) {
        return true;
      }
    }
  }
  return false;
}

TEST(Generator, StraightScenariosNeverOverlap)
{
  GenConfig cfg;
  cfg.count = 50;
  cfg.templates = {SceneTemplate::Straight};
  cfg.steps = 40;
  cfg.dt = 0.25;
  const auto data = generate_synthetic_dataset(cfg, 7);
  ASSERT_EQ(data.size(), 50u);
  for (const auto & s : data) {
    EXPECT_NO_THROW(validate(s));
    std::vector<std::pair<const Trajectory *, Dims>> agents;
    for (std::size_t i = 0; i < s.refs.size(); ++i) {
      agents.emplace_back(&s.refs[i], s.ref_dims(i));
    }
    agents.emplace_back(&s.adv_ref, s.adversary_dims());
    for (std::size_t i = 0; i < agents.size(); ++i) {
      for (std::size_t j = i + 1; j < agents.size(); ++j) {
        for (const double d : min_separation(*agents[i].first, agents[i].second, *agents[j].first, agents[j].second)) {
          EXPECT_GE(d, 0.0) << s.id();
        }
      }
    }
  }
}

TEST(Generator, SameSeedIsByteIdentical)
{
  GenConfig cfg;
  cfg.count = 1;
  cfg.min_agents = 2;
  cfg.max_agents = 2;
  const auto a = generate_synthetic_dataset(cfg, 1);
  const auto b = generate_synthetic_dataset(cfg, 1);
  EXPECT_EQ(io::to_json(a[0]).dump(), io::to_json(b[0]).dump());
  EXPECT_NE(io::to_json(a[0]).dump(), io::to_json(generate_synthetic_dataset(cfg, 2)[0]).dump());
}

TEST(Generator, IntersectionTrajectoriesStayNearLanes)
{
  GenConfig cfg;
  cfg.count = 10;
  cfg.templates = {SceneTemplate::TIntersection};
  for (const auto & s : generate_synthetic_dataset(cfg, 3)) {
    std::vector<const Trajectory *> trajs{&s.adv_ref};
    for (const auto & r : s.refs) {
      trajs.push_back(&r);
    }
    for (const auto * tr : trajs) {
      for (std::size_t t = 0; t < tr->steps(); ++t) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto & lane : s.scene.lanes) {
          for (std::size_t k = 1; k < lane.size(); ++k) {
            best = std::min(best, point_segment_distance(tr->at(t), lane[k - 1], lane[k]));
          }
        }
        EXPECT_LE(best, 3.0) << s.id() << " t=" << t;
      }
    }
  }
}

TEST(Generator, InfeasibleCapacityIsRejected)
{
  GenConfig cfg;
  cfg.spawn_gap = 1000.0;
  cfg.max_agents = 6;
  EXPECT_THROW(generate_synthetic_dataset(cfg, 1), std::invalid_argument);
  cfg = GenConfig{};
  cfg.max_agents = 7;
  EXPECT_THROW(generate_synthetic_dataset(cfg, 1), std::invalid_argument);
}

TEST(Separation, IdenticalTrajectoriesOverlapEverywhere)
{
  const auto a = test::line({0, 0}, {10, 0}, 20, 0.1);
  for (const double d : min_separation(a, Dims{}, a, Dims{})) {
    EXPECT_LT(d, 0.0);
  }
}

TEST(Separation, ParallelOffsetIsGapBetweenSides)
{
  const auto a = test::line({0, 0}, {10, 0}, 20, 0.1);
  const auto b = test::line({0, 10}, {10, 0}, 20, 0.1);
  for (const double d : min_separation(a, Dims{4.5, 2.0}, b, Dims{4.5, 2.0})) {
    EXPECT_NEAR(d, 8.0, 1e-9);
  }
}

TEST(Separation, MismatchedLengthThrows)
{
  EXPECT_THROW(
    min_separation(test::line({0, 0}, {1, 0}, 10, 0.1), Dims{}, test::line({0, 0}, {1, 0}, 11, 0.1), Dims{}),
    std::invalid_argument);
}

TEST(Separation, CrossingSignChangeMatchesDenseSampling)
{
  // a drives +x through the origin, b drives +y through the origin slightly later
  const std::size_t T = 30;
  const double dt = 0.1;
  const auto a = test::line({-15, 0}, {10, 0}, T, dt);
  const auto b = test::line({0, -18}, {0, 10}, T, dt);
  const Dims da{4.5, 2.0};
  const Dims db{4.0, 1.8};
  const auto sep = min_separation(a, da, b, db);
  const auto ha = headings(a);
  const auto hb = headings(b);
  bool any = false;
  for (std::size_t t = 0; t < T; ++t) {
    const bool dense = sampled_overlap({a.at(t), ha[t], da}, {b.at(t), hb[t], db}) ||
                       sampled_overlap({b.at(t), hb[t], db}, {a.at(t), ha[t], da});
    // sampling resolution blurs contact within a centimetre
    if (std::abs(sep[t]) > 0.02) {
      EXPECT_EQ(sep[t] < 0.0, dense) << "t=" << t << " sep=" << sep[t];
    }
    any = any || sep[t] < 0.0;
  }
  EXPECT_TRUE(any);
  const auto first = first_overlap(a, da, b, db);
  ASSERT_TRUE(first.has_value());
  EXPECT_GE(sep[*first - 1], 0.0);
}

policy::PolicyLog log_with(const Trajectory & target, std::size_t impact, std::optional<double> brake = std::nullopt)
{
  policy::PolicyLog log;
  log.target = target;
  log.impact_index = impact;
  log.first_brake_time = brake;
  return log;
}

TEST(Featurize, RearEndIsChasing)
{
  const double dt = 0.1;
  const auto tgt = test::line({20, 0}, {9, 0}, 30, dt);
  const auto adv = test::line({0, 0}, {22, 0}, 30, dt);
  const auto s = test::scenario({tgt}, adv);
  const auto hit = first_overlap(adv, s.adversary_dims(), tgt, s.target_dims());
  ASSERT_TRUE(hit.has_value());
  const auto rec = featurize_crash(s, adv, log_with(tgt, *hit));
  EXPECT_TRUE(rec.collided);
  EXPECT_NEAR(rec.v_a, 22.0, 1e-9);
  EXPECT_NEAR(rec.dvx, 13.0, 1e-9);
  EXPECT_NEAR(rec.dvy, 0.0, 1e-9);
  EXPECT_NEAR(rec.gamma, 0.0, 1e-12);
  EXPECT_EQ(rec.crash_type, CrashType::Chasing);
  EXPECT_FALSE(rec.responded);
  EXPECT_FALSE(rec.t_r.has_value());
}

TEST(Featurize, HeadOnIsContrasting)
{
  const double dt = 0.1;
  const auto tgt = test::line({0, 0}, {10, 0}, 30, dt);
  const auto adv = test::line({40, 0}, {-10, 0}, 30, dt);
  const auto s = test::scenario({tgt}, adv);
  const auto hit = first_overlap(adv, s.adversary_dims(), tgt, s.target_dims());
  ASSERT_TRUE(hit.has_value());
  const auto rec = featurize_crash(s, adv, log_with(tgt, *hit, 0.5));
  EXPECT_NEAR(std::abs(rec.gamma), kPi, 1e-12);
  EXPECT_EQ(rec.crash_type, CrashType::Contrasting);
  EXPECT_NEAR(rec.dvx, 20.0, 1e-9);
  EXPECT_TRUE(rec.responded);
  EXPECT_DOUBLE_EQ(*rec.t_r, 0.5);
}

TEST(Featurize, CrossingFromLeftIsSideLeft)
{
  // target heads +x; adversary comes from its left (+y) heading -y, rotated by an
  // arbitrary angle to exercise the frame transform
  const double dt = 0.1;
  const double rot = 0.7;
  auto tgt = test::line({-20, 0}, {10, 0}, 40, dt);
  auto adv = test::line({0, 20}, {0, -10}, 40, dt);
  for (auto * tr : {&tgt, &adv}) {
    for (Eigen::Index t = 0; t < tr->positions.rows(); ++t) {
      tr->positions.row(t) = rotate(tr->positions.row(t).transpose(), rot).transpose();
    }
  }
  const auto s = test::scenario({tgt}, adv);
  const auto hit = first_overlap(adv, s.adversary_dims(), tgt, s.target_dims());
  ASSERT_TRUE(hit.has_value());
  const auto rec = featurize_crash(s, adv, log_with(tgt, *hit));
  EXPECT_NEAR(rec.gamma, -kPi / 2.0, 1e-9);

  // independent body-frame check: the adversary sits on the target's left
  const std::size_t t = *hit - 1;
  const double h = std::atan2(tgt.at(t + 1).y() - tgt.at(t).y(), tgt.at(t + 1).x() - tgt.at(t).x());
  Eigen::Matrix2d R;
  R << std::cos(h), std::sin(h), -std::sin(h), std::cos(h);
  const Vec2 rel = R * (adv.at(t) - tgt.at(t));
  EXPECT_GT(rel.y(), 0.0);
  EXPECT_NEAR(rec.dvx, 10.0, 1e-9);
  EXPECT_NEAR(rec.dvy, 10.0, 1e-9);
  EXPECT_EQ(rec.crash_type, CrashType::SideLeft);
}

TEST(Featurize, NoImpactMeansNoCrash)
{
  const auto tgt = test::line({0, 0}, {10, 0}, 20, 0.1);
  const auto adv = test::line({0, 10}, {10, 0}, 20, 0.1);
  policy::PolicyLog log;
  log.target = tgt;
  const auto rec = featurize_crash(test::scenario({tgt}, adv), adv, log);
  EXPECT_FALSE(rec.collided);
  EXPECT_FALSE(rec.crash_type.has_value());
}

TEST(CrashType, ClassifiesByImpactAngle)
{
  EXPECT_EQ(classify_crash_type(0.0, {-5, 0}), CrashType::Chasing);
  EXPECT_EQ(classify_crash_type(kPi, {3, 1}), CrashType::Contrasting);
  EXPECT_EQ(classify_crash_type(-kPi, {-3, -1}), CrashType::Contrasting);
  EXPECT_EQ(classify_crash_type(-kPi / 2.0, {0, -3}), CrashType::SideRight);
  EXPECT_EQ(classify_crash_type(kPi / 2.0, {0, 3}), CrashType::SideLeft);
  EXPECT_EQ(classify_crash_type(-kPi / 2.0, {1, 3}), CrashType::SideLeft);
  EXPECT_EQ(classify_crash_type(kPi / 2.0, {1, -3}), CrashType::SideRight);
  EXPECT_EQ(classify_crash_type(kPi / 2.0, {0, 0}), CrashType::SideLeft);
  for (const auto c : {CrashType::Contrasting, CrashType::Chasing, CrashType::SideLeft, CrashType::SideRight}) {
    EXPECT_EQ(crash_type_from_string(to_string(c)), c);
  }
}

TEST(ScenarioIo, JsonRoundTripIsExact)
{
  GenConfig cfg;
  cfg.count = 3;
  for (const auto & s : generate_synthetic_dataset(cfg, 11)) {
    const auto back = io::scenario_from_json(nlohmann::json::parse(io::to_json(s).dump()));
    EXPECT_EQ(io::to_json(back).dump(), io::to_json(s).dump());
  }
}

TEST(ScenarioIo, CrashCsvRoundTrip)
{
  CrashRecord a;
  a.scenario_id = "x";
  a.collided = true;
  a.impact_t = 7;
  a.v_a = 0.1;
  a.dvx = 1.0 / 3.0;
  a.dvy = 2.5;
  a.gamma = -1.25;
  a.crash_type = CrashType::SideRight;
  a.responded = true;
  a.t_r = 1.5;
  CrashRecord b;
  b.scenario_id = "y";
  std::stringstream ss;
  io::write_crash_csv(ss, {a, b});
  const auto back = io::read_crash_csv(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].dvx, a.dvx);
  EXPECT_EQ(back[0].crash_type, a.crash_type);
  EXPECT_EQ(back[0].t_r, a.t_r);
  EXPECT_EQ(back[0].impact_t, a.impact_t);
  EXPECT_FALSE(back[1].collided);
  EXPECT_FALSE(back[1].t_r.has_value());
  EXPECT_FALSE(back[1].crash_type.has_value());
}

TEST(ScenarioValidation, RejectsBrokenScenarios)
{
  auto s = test::scenario({test::line({0, 0}, {1, 0}, 10, 0.1)}, test::line({0, 5}, {1, 0}, 10, 0.1));
  EXPECT_NO_THROW(validate(s));
  auto bad = s;
  bad.target_index = 3;
  EXPECT_THROW(validate(bad), std::invalid_argument);
  bad = s;
  bad.dims.pop_back();
  EXPECT_THROW(validate(bad), std::invalid_argument);
  bad = s;
  bad.refs[0] = test::line({0, 0}, {1, 0}, 9, 0.1);
  EXPECT_THROW(validate(bad), std::invalid_argument);
}

}  // namespace
}  // namespace crashgen

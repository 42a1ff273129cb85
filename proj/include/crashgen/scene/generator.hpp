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
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "crashgen/scene/scenario.hpp"
#include "crashgen/scene/threat.hpp"
#include "crashgen/util/rng.hpp"

namespace crashgen
{

enum class SceneTemplate { Straight, TIntersection, FourWay };

inline const char * to_string(SceneTemplate t)
{
  switch (t) {
    case SceneTemplate::Straight:
      return "straight";
    case SceneTemplate::TIntersection:
      return "t_intersection";
    case SceneTemplate::FourWay:
      return "four_way";
  }
  return "?";
}

inline SceneTemplate scene_template_from_string(const std::string & s)
{
  if (s == "straight") return SceneTemplate::Straight;
  if (s == "t_intersection") return SceneTemplate::TIntersection;
  if (s == "four_way" || s == "4way") return SceneTemplate::FourWay;
  throw std::invalid_argument("unknown scene template '" + s + "'");
}

class GenerationError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

struct GenConfig
{
  std::size_t count = 50;
  std::vector<SceneTemplate> templates{SceneTemplate::Straight};
  std::size_t min_agents = 2;  ///< adversary included
  std::size_t max_agents = 6;
  std::size_t steps = 40;
  double dt = 0.25;
  double lane_width = 5.5;
  Dims dims{};
  double min_speed = 6.0;
  double max_speed = 16.0;  ///< initial speeds are drawn from [min_speed, max_speed]
  double cruise_speed = 12.0;      ///< speed every vehicle relaxes to, m/s
  double ramp_accel = 1.5;         ///< peak acceleration of the relaxation ramp, m/s^2
  double speed_noise = 0.5;        ///< magnitude bound of the late random slow-down, m/s
  double max_lateral_accel = 2.5;  ///< caps speed on curved routes
  double spawn_range = 80.0;       ///< spawn window along the start of each route, m
  double spawn_gap = 12.0;         ///< nominal spacing used for lane capacity
  double clearance = 0.5;          ///< required footprint gap between any two agents, m
  double reach_distance = 20.0;    ///< target must pass within this distance of the adversary
  double accel_limit = 4.0;        ///< target reference acceleration bound (per axis)
  ThreatThresholds target_envelope{};
  std::size_t max_attempts = 100;
  std::size_t placement_tries = 20;
  std::string id_prefix = "scn";
};

namespace detail
{

struct Route
{
  Polyline path;
  std::vector<double> cum;
  double speed_cap = 0.0;
};

inline Polyline bezier(const Vec2 & p0, const Vec2 & p1, const Vec2 & p2, const Vec2 & p3, int samples)
{
  Polyline out;
  for (int i = 0; i <= samples; ++i) {
    const double u = static_cast<double>(i) / samples;
    const double a = (1 - u) * (1 - u) * (1 - u);
    const double b = 3 * (1 - u) * (1 - u) * u;
    const double c = 3 * (1 - u) * u * u;
    const double d = u * u * u;
    out.push_back(a * p0 + b * p1 + c * p2 + d * p3);
  }
  return out;
}

/// Discrete curvature bound of a polyline from turning angle over segment length.
inline double max_curvature(const Polyline & poly)
{
  double k = 0.0;
  for (std::size_t i = 1; i + 1 < poly.size(); ++i) {
    const Vec2 a = poly[i] - poly[i - 1];
    const Vec2 b = poly[i + 1] - poly[i];
    const double turn = std::abs(std::atan2(cross2(a, b), a.dot(b)));
    k = std::max(k, turn / (0.5 * (a.norm() + b.norm())));
  }
  return k;
}

inline Route make_route(Polyline path, const GenConfig & cfg)
{
  Route r;
  r.path = std::move(path);
  r.cum = cumulative_lengths(r.path);
  const double k = max_curvature(r.path);
  r.speed_cap = k > 1e-9 ? std::min(cfg.max_speed, std::sqrt(cfg.max_lateral_accel / k)) : cfg.max_speed;
  return r;
}

inline void append(Polyline & dst, const Polyline & src)
{
  for (const auto & p : src) {
    if (dst.empty() || (p - dst.back()).norm() > 1e-9) {
      dst.push_back(p);
    }
  }
}

inline std::vector<Route> straight_layout(const GenConfig & cfg)
{
  const double w = cfg.lane_width;
  std::vector<Route> routes;
  for (const double y : {-0.5 * w, -1.5 * w}) {
    routes.push_back(make_route({Vec2{-100.0, y}, Vec2{400.0, y}}, cfg));
  }
  for (const double y : {0.5 * w, 1.5 * w}) {
    routes.push_back(make_route({Vec2{250.0, y}, Vec2{-250.0, y}}, cfg));
  }
  return routes;
}

/// Intersection with arms along the given outward unit directions. Each arm has one
/// incoming lane per available manoeuvre (left, straight, right, innermost first) and a
/// single outgoing lane; traffic keeps right.
inline std::vector<Route> intersection_layout(const std::vector<Vec2> & arms, const GenConfig & cfg)
{
  const double w = cfg.lane_width;
  const double box = 3.0 * w + 2.0;
  const double approach = box + cfg.spawn_range + 20.0;
  const double exit_len = 250.0;
  const auto normal = [](const Vec2 & u) { return Vec2{-u.y(), u.x()}; };
  const auto has_arm = [&](const Vec2 & v) {
    return std::any_of(arms.begin(), arms.end(), [&](const Vec2 & a) { return (a - v).norm() < 1e-9; });
  };

  std::vector<Route> routes;
  for (const auto & u : arms) {
    const Vec2 n = normal(u);
    // destination arm per manoeuvre, ordered left, straight, right
    const std::vector<Vec2> dests{-n, -u, n};
    for (std::size_t m = 0; m < dests.size(); ++m) {
      const Vec2 & v = dests[m];
      if (!has_arm(v)) {
        continue;
      }
      const double offset = (0.5 + static_cast<double>(m)) * w;
      const Vec2 start = approach * u + offset * n;
      const Vec2 stop = box * u + offset * n;
      const Vec2 nv = normal(v);
      const Vec2 enter = box * v - 0.5 * w * nv;
      const Vec2 leave = (box + exit_len) * v - 0.5 * w * nv;
      const double c = 0.45 * (enter - stop).norm();
      Polyline path{start};
      append(path, bezier(stop, stop - c * u, enter - c * v, enter, 32));
      append(path, {leave});
      routes.push_back(make_route(std::move(path), cfg));
    }
  }
  return routes;
}

inline std::vector<Route> layout_for(SceneTemplate t, const GenConfig & cfg)
{
  switch (t) {
    case SceneTemplate::Straight:
      return straight_layout(cfg);
    case SceneTemplate::TIntersection:
      return intersection_layout({Vec2{1, 0}, Vec2{-1, 0}, Vec2{0, -1}}, cfg);
    case SceneTemplate::FourWay:
      return intersection_layout({Vec2{1, 0}, Vec2{0, 1}, Vec2{-1, 0}, Vec2{0, -1}}, cfg);
  }
  return {};
}

/// Speed v(t) = v0 + dv1 S((t-t1)/tau1) + dv2 S((t-t2)/tau2) with the raised-cosine ramp
/// S(x) = (1 - cos(pi x)) / 2 on [0, 1]: an acceleration phase, cruise, then a deceleration
/// phase, with continuous acceleration at every corner.
struct SpeedProfile
{
  double v0 = 10.0;
  double dv1 = 0.0, t1 = 0.0, tau1 = 3.0;
  double dv2 = 0.0, t2 = 0.0, tau2 = 3.0;

  static double ramp_integral(double x)
  {
    if (x <= 0.0) {
      return 0.0;
    }
    if (x >= 1.0) {
      return x - 0.5;
    }
    return 0.5 * x - std::sin(std::numbers::pi * x) / (2.0 * std::numbers::pi);
  }

  double distance(double t) const
  {
    return v0 * t + dv1 * tau1 * ramp_integral((t - t1) / tau1) + dv2 * tau2 * ramp_integral((t - t2) / tau2);
  }
};

/// Every vehicle relaxes from its initial speed to the route's cruise speed (the curve
/// speed on turning routes) in one ramp, then cruises; a small random deceleration ramp
/// later on keeps the data from being exactly predictable.
inline SpeedProfile sample_profile(util::Rng & rng, double cap, const GenConfig & cfg)
{
  const double duration = static_cast<double>(cfg.steps - 1) * cfg.dt;
  SpeedProfile p;
  const double cruise = std::min(cfg.cruise_speed, cap);
  p.v0 = util::uniform(rng, std::min(cfg.min_speed, 0.7 * cap), std::min(cfg.max_speed, cap));
  p.dv1 = cruise - p.v0;
  p.t1 = 0.0;
  p.tau1 = std::max(2.5, std::abs(p.dv1) * std::numbers::pi / (2.0 * cfg.ramp_accel));
  p.dv2 = -util::uniform(rng, 0.0, cfg.speed_noise);
  p.tau2 = 3.0;
  p.t2 = util::uniform(rng, p.tau1, std::max(p.tau1, duration));
  return p;
}

inline Trajectory drive(const Route & route, double s0, const SpeedProfile & p, const GenConfig & cfg)
{
  Trajectory tr;
  tr.dt = cfg.dt;
  tr.positions.resize(static_cast<Eigen::Index>(cfg.steps), 2);
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    const Vec2 q = point_at_arclength(route.path, route.cum, s0 + p.distance(static_cast<double>(t) * cfg.dt));
    tr.positions.row(static_cast<Eigen::Index>(t)) = q.transpose();
  }
  return tr;
}

inline bool clear_of(
  const Trajectory & cand, const std::vector<Trajectory> & placed, const GenConfig & cfg)
{
  for (const auto & other : placed) {
    for (const double d : min_separation(cand, cfg.dims, other, cfg.dims)) {
      if (d <= cfg.clearance) {
        return false;
      }
    }
  }
  return true;
}

inline bool within_accel_limit(const Trajectory & tr, double limit)
{
  for (std::size_t t = 0; t + 1 < tr.steps(); ++t) {
    const Vec2 a = (step_velocity(tr, t + 1) - step_velocity(tr, t)) / tr.dt;
    if (a.cwiseAbs().maxCoeff() > limit) {
      return false;
    }
  }
  return true;
}

/// True when the constant-velocity threat predicate stays quiet for `ego` against every
/// other agent at every step.
inline bool threat_free(
  const Trajectory & ego, const std::vector<const Trajectory *> & others, const GenConfig & cfg)
{
  const double radius = 2.0 * cfg.dims.half_diagonal();
  for (std::size_t t = 0; t < ego.steps(); ++t) {
    const Vec2 x = ego.at(t);
    const Vec2 v = step_velocity(ego, t);
    for (const auto * o : others) {
      const auto threat =
        assess_threat(x, v, o->at(t), step_velocity(*o, t), radius, cfg.target_envelope.horizon);
      if (threat.triggers(cfg.target_envelope)) {
        return false;
      }
    }
  }
  return true;
}

inline std::optional<Scenario> try_generate(
  SceneTemplate tmpl, const std::vector<Route> & routes, util::Rng & rng, std::size_t n_agents,
  const GenConfig & cfg)
{
  std::vector<Trajectory> agents;
  std::uniform_int_distribution<std::size_t> pick_route(0, routes.size() - 1);
  for (std::size_t a = 0; a < n_agents; ++a) {
    bool placed = false;
    for (std::size_t k = 0; k < cfg.placement_tries && !placed; ++k) {
      const Route & route = routes[pick_route(rng)];
      const double s0 = util::uniform(rng, 0.0, cfg.spawn_range);
      const auto profile = sample_profile(rng, route.speed_cap, cfg);
      Trajectory tr = drive(route, s0, profile, cfg);
      if (clear_of(tr, agents, cfg)) {
        agents.push_back(std::move(tr));
        placed = true;
      }
    }
    if (!placed) {
      return std::nullopt;
    }
  }

  // agent 0 is the adversary; the target is the closest-passing agent whose own
  // reference is trackable and raises no constant-velocity threat
  const Trajectory & adv = agents.front();
  std::optional<std::size_t> target;
  double best = cfg.reach_distance;
  for (std::size_t j = 1; j < agents.size(); ++j) {
    double reach = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < cfg.steps; ++t) {
      reach = std::min(reach, (adv.at(t) - agents[j].at(t)).norm());
    }
    if (reach > best) {
      continue;
    }
    std::vector<const Trajectory *> others;
    for (std::size_t i = 0; i < agents.size(); ++i) {
      if (i != j) {
        others.push_back(&agents[i]);
      }
    }
    if (!within_accel_limit(agents[j], cfg.accel_limit) || !threat_free(agents[j], others, cfg)) {
      continue;
    }
    best = reach;
    target = j - 1;
  }
  if (!target) {
    return std::nullopt;
  }

  Scenario s;
  s.scene.scene_id = std::string(to_string(tmpl));
  for (const auto & r : routes) {
    s.scene.lanes.push_back(r.path);
  }
  s.adv_ref = adv;
  s.adv_init = AgentState{adv.at(0), step_velocity(adv, 0)};
  s.refs.assign(agents.begin() + 1, agents.end());
  s.target_index = *target;
  s.dims.assign(agents.size(), cfg.dims);
  return s;
}

inline std::size_t lane_capacity(const std::vector<Route> & routes, const GenConfig & cfg)
{
  const auto per_lane = static_cast<std::size_t>(std::floor(cfg.spawn_range / cfg.spawn_gap)) + 1;
  return routes.size() * per_lane;
}

}  // namespace detail

inline void validate(const GenConfig & cfg)
{
  const auto fail = [](const std::string & what) { throw std::invalid_argument("generator config: " + what); };
  if (cfg.templates.empty()) fail("no scene templates");
  if (cfg.min_agents < 2 || cfg.max_agents > 6 || cfg.min_agents > cfg.max_agents) {
    fail("agent counts must satisfy 2 <= min_agents <= max_agents <= 6");
  }
  if (cfg.steps < 2) fail("steps must be >= 2");
  if (!(cfg.dt > 0.0)) fail("dt must be positive");
  if (!(cfg.lane_width > 0.0)) fail("lane width must be positive");
  if (!(cfg.min_speed > 0.0) || cfg.max_speed < cfg.min_speed) fail("speed range is empty");
  if (!(cfg.dims.length > 0.0 && cfg.dims.width > 0.0)) fail("vehicle dims must be positive");
  if (cfg.lane_width <= cfg.dims.width) fail("lane width must exceed vehicle width");
  for (const auto t : cfg.templates) {
    const auto routes = detail::layout_for(t, cfg);
    const auto cap = detail::lane_capacity(routes, cfg);
    if (cfg.max_agents > cap) {
      fail(
        std::string("template ") + to_string(t) + " holds at most " + std::to_string(cap) + " agents, " +
        std::to_string(cfg.max_agents) + " requested");
    }
  }
}

/// Generates `cfg.count` collision-free reference scenarios. Scenario i draws from its own
/// stream derived from (seed, i), so the output is independent of generation order.
inline std::vector<Scenario> generate_synthetic_dataset(const GenConfig & cfg, std::uint64_t seed)
{
  validate(cfg);
  std::vector<Scenario> out;
  out.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) {
    auto rng = util::make_rng(seed, "scenario", i);
    const SceneTemplate tmpl = cfg.templates[std::uniform_int_distribution<std::size_t>(
      0, cfg.templates.size() - 1)(rng)];
    const auto routes = detail::layout_for(tmpl, cfg);
    std::optional<Scenario> s;
    for (std::size_t attempt = 0; attempt < cfg.max_attempts && !s; ++attempt) {
      const auto n_agents =
        std::uniform_int_distribution<std::size_t>(cfg.min_agents, cfg.max_agents)(rng);
      s = detail::try_generate(tmpl, routes, rng, n_agents, cfg);
    }
    if (!s) {
      throw GenerationError(
        "scenario " + std::to_string(i) + " (" + to_string(tmpl) + "): no collision-free sample after " +
        std::to_string(cfg.max_attempts) + " attempts");
    }
    char id[64];
    std::snprintf(id, sizeof id, "%s-%05zu", cfg.id_prefix.c_str(), i);
    s->scene.scene_id = id;
    out.push_back(std::move(*s));
  }
  return out;
}

}  // namespace crashgen

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
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "crashgen/scene/scenario.hpp"
#include "crashgen/scene/threat.hpp"

namespace crashgen::policy
{

enum class Mode { Track, Brake };

inline const char * to_string(Mode m) { return m == Mode::Track ? "Track" : "Brake"; }

struct PolicyConfig
{
  double d_min = 2.0;
  double t_min = 1.5;
  double a_max = 4.0;
  double brake = 6.0;  ///< requested deceleration; applied as min(brake, a_max)
  double horizon = 5.0;
  double velocity_weight = 0.1;

  double brake_decel() const { return std::min(brake, a_max); }
  ThreatThresholds thresholds() const { return {d_min, t_min, horizon}; }
};

inline void validate(const PolicyConfig & c)
{
  if (!(c.d_min > 0.0 && c.t_min > 0.0 && c.a_max > 0.0 && c.brake > 0.0 && c.horizon > 0.0 &&
        c.velocity_weight > 0.0)) {
    throw std::invalid_argument("PolicyConfig: all parameters must be positive");
  }
}

struct Kinematics
{
  Vec2 position = Vec2::Zero();
  Vec2 velocity = Vec2::Zero();
  Dims dims{};
};

struct Command
{
  Vec2 accel = Vec2::Zero();
  Mode mode = Mode::Track;
};

inline ThreatAssessment ttc_and_distance(
  const Vec2 & x, const Vec2 & v, const Vec2 & x_i, const Vec2 & v_i, double horizon, double contact_radius)
{
  return assess_threat(x, v, x_i, v_i, contact_radius, horizon);
}

/// Minimizer of |x(t+1) - x_ref|^2 + w |v(t+1) - v_ref|^2 under x(t+1) = x + v dt,
/// v(t+1) = v + a dt, clipped to the acceleration box. The position term does not
/// depend on a, so the cost is separable and clipping each axis is exact.
inline Vec2 tracking_accel(const Vec2 & v, const Vec2 & v_ref_next, double dt, double a_max)
{
  const Vec2 a = (v_ref_next - v) / dt;
  return a.cwiseMax(-a_max).cwiseMin(a_max);
}

inline bool threatened(const Kinematics & ego, const std::vector<Kinematics> & others, const PolicyConfig & cfg)
{
  for (const auto & o : others) {
    const double radius = ego.dims.half_diagonal() + o.dims.half_diagonal();
    if (ttc_and_distance(ego.position, ego.velocity, o.position, o.velocity, cfg.horizon, radius)
          .triggers(cfg.thresholds())) {
      return true;
    }
  }
  return false;
}

inline Command policy_step(
  const Kinematics & ego, const Vec2 & v_ref_next, const std::vector<Kinematics> & others, double dt,
  const PolicyConfig & cfg)
{
  Command c;
  if (threatened(ego, others, cfg)) {
    c.mode = Mode::Brake;
    const double speed = ego.velocity.norm();
    const double decel = cfg.brake_decel();
    if (speed < decel * dt) {
      c.accel = -ego.velocity / dt;  // comes to rest within the step
    } else {
      c.accel = -decel * ego.velocity / speed;
    }
    return c;
  }
  c.accel = tracking_accel(ego.velocity, v_ref_next, dt, cfg.a_max);
  return c;
}

struct PolicyLog
{
  std::vector<Vec2> positions;
  std::vector<Vec2> velocities;
  std::vector<Vec2> accelerations;
  std::vector<Mode> modes;
  std::optional<double> first_brake_time;
  std::optional<std::size_t> impact_index;  ///< first overlap with the adversary
  Trajectory target;                         ///< full T-step trajectory of the target

  std::size_t commanded_steps() const { return modes.size(); }
};

/// Replays the target under the policy against a fixed adversary trajectory; all other
/// agents follow their references. Commands stop at the first target-adversary overlap
/// and the target coasts afterwards so the returned trajectory keeps T rows.
inline PolicyLog replay(const Scenario & s, const Trajectory & adv, const PolicyConfig & cfg)
{
  validate(cfg);
  const std::size_t T = s.steps();
  const double dt = s.dt();
  if (adv.steps() != T || std::abs(adv.dt - dt) > 1e-12) {
    throw std::invalid_argument("replay: adversary trajectory does not match scenario '" + s.id() + "'");
  }
  const Trajectory & ref = s.target_ref();
  const Dims ego_dims = s.target_dims();
  const auto adv_heading = headings(adv);

  PolicyLog log;
  log.target.dt = dt;
  log.target.positions.resize(static_cast<Eigen::Index>(T), 2);
  Vec2 x = ref.at(0);
  Vec2 v = step_velocity(ref, 0);
  std::optional<double> last_heading;

  bool crashed = false;
  for (std::size_t t = 0; t < T; ++t) {
    log.target.positions.row(static_cast<Eigen::Index>(t)) = x.transpose();
    if (!crashed) {
      const double h = v.norm() > 1e-9 ? std::atan2(v.y(), v.x()) : last_heading.value_or(adv_heading[t]);
      last_heading = h;
      const OrientedBox ego_box{x, h, ego_dims};
      const OrientedBox adv_box{adv.at(t), adv_heading[t], s.adversary_dims()};
      if (boxes_overlap(ego_box, adv_box)) {
        crashed = true;
        log.impact_index = t;
      }
    }
    if (t + 1 == T) {
      break;
    }
    Vec2 a = Vec2::Zero();
    if (!crashed) {
      std::vector<Kinematics> others;
      others.push_back({adv.at(t), step_velocity(adv, t), s.adversary_dims()});
      for (std::size_t i = 0; i < s.refs.size(); ++i) {
        if (i != s.target_index) {
          others.push_back({s.refs[i].at(t), step_velocity(s.refs[i], t), s.ref_dims(i)});
        }
      }
      const Command c = policy_step({x, v, ego_dims}, step_velocity(ref, t + 1), others, dt, cfg);
      a = c.accel;
      if (c.mode == Mode::Brake && !log.first_brake_time) {
        log.first_brake_time = static_cast<double>(t) * dt;
      }
      log.positions.push_back(x);
      log.velocities.push_back(v);
      log.accelerations.push_back(a);
      log.modes.push_back(c.mode);
    }
    x += v * dt;
    v += a * dt;
  }
  return log;
}

}  // namespace crashgen::policy

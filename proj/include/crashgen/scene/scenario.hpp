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
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crashgen/scene/geometry.hpp"

namespace crashgen
{

/// T x 2 positions sampled every dt seconds.
struct Trajectory
{
  Eigen::MatrixX2d positions;
  double dt = 0.1;

  std::size_t steps() const { return static_cast<std::size_t>(positions.rows()); }
  Vec2 at(std::size_t t) const { return positions.row(static_cast<Eigen::Index>(t)).transpose(); }
};

/// Velocity carrying position t to t+1 (backward difference at the last step).
inline Vec2 step_velocity(const Trajectory & traj, std::size_t t)
{
  const std::size_t T = traj.steps();
  if (T < 2) {
    return Vec2::Zero();
  }
  if (t + 1 < T) {
    return (traj.at(t + 1) - traj.at(t)) / traj.dt;
  }
  return (traj.at(T - 1) - traj.at(T - 2)) / traj.dt;
}

/// Per-step headings from central differences (one-sided at the ends). Steps whose
/// difference vanishes inherit the previous defined heading, or the next one at the start.
inline std::vector<double> headings(const Trajectory & traj, double stationary_eps = 1e-9)
{
  const std::size_t T = traj.steps();
  std::vector<double> h(T, 0.0);
  std::vector<bool> defined(T, false);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t lo = t == 0 ? 0 : t - 1;
    const std::size_t hi = t + 1 < T ? t + 1 : T - 1;
    const Vec2 d = traj.at(hi) - traj.at(lo);
    if (hi > lo && d.norm() > stationary_eps) {
      h[t] = std::atan2(d.y(), d.x());
      defined[t] = true;
    }
  }
  std::optional<std::size_t> first;
  for (std::size_t t = 0; t < T; ++t) {
    if (defined[t]) {
      first = first ? first : t;
    } else if (first) {
      h[t] = h[t - 1];
    }
  }
  if (first) {
    for (std::size_t t = 0; t < *first; ++t) {
      h[t] = h[*first];
    }
  }
  return h;
}

inline std::vector<OrientedBox> footprints(const Trajectory & traj, const Dims & dims)
{
  const auto hd = headings(traj);
  std::vector<OrientedBox> boxes(traj.steps());
  for (std::size_t t = 0; t < traj.steps(); ++t) {
    boxes[t] = OrientedBox{traj.at(t), hd[t], dims};
  }
  return boxes;
}

/// Per-step signed separation of two oriented footprints; negative means overlap.
inline std::vector<double> min_separation(
  const Trajectory & a, const Dims & dims_a, const Trajectory & b, const Dims & dims_b)
{
  if (a.steps() != b.steps()) {
    throw std::invalid_argument(
      "min_separation: trajectories have " + std::to_string(a.steps()) + " and " +
      std::to_string(b.steps()) + " steps");
  }
  if (std::abs(a.dt - b.dt) > 1e-12) {
    throw std::invalid_argument("min_separation: trajectories have different dt");
  }
  const auto ba = footprints(a, dims_a);
  const auto bb = footprints(b, dims_b);
  std::vector<double> sep(a.steps());
  for (std::size_t t = 0; t < sep.size(); ++t) {
    sep[t] = signed_separation(ba[t], bb[t]);
  }
  return sep;
}

/// First step at which the footprints overlap.
inline std::optional<std::size_t> first_overlap(
  const Trajectory & a, const Dims & dims_a, const Trajectory & b, const Dims & dims_b)
{
  const auto sep = min_separation(a, dims_a, b, dims_b);
  for (std::size_t t = 0; t < sep.size(); ++t) {
    if (sep[t] < 0.0) {
      return t;
    }
  }
  return std::nullopt;
}

struct SceneDescription
{
  std::string scene_id;
  std::vector<Polyline> lanes;
  std::vector<Polyline> drivable_area;  ///< optional closed polygons
};

struct AgentState
{
  Vec2 position = Vec2::Zero();
  Vec2 velocity = Vec2::Zero();
};

/// A reference scene: N non-adversarial agents with recorded trajectories, plus the
/// adversary's initial state and its own recorded (collision-free) trajectory.
/// `dims` holds one footprint per reference agent followed by the adversary's.
struct Scenario
{
  SceneDescription scene;
  std::vector<Trajectory> refs;
  AgentState adv_init;
  Trajectory adv_ref;
  std::size_t target_index = 0;
  std::vector<Dims> dims;

  const std::string & id() const { return scene.scene_id; }
  std::size_t steps() const { return adv_ref.steps(); }
  double dt() const { return adv_ref.dt; }
  const Trajectory & target_ref() const { return refs.at(target_index); }
  const Dims & ref_dims(std::size_t i) const { return dims.at(i); }
  const Dims & adversary_dims() const { return dims.back(); }
  const Dims & target_dims() const { return dims.at(target_index); }
};

/// Throws std::invalid_argument describing the first violated structural invariant.
inline void validate(const Scenario & s)
{
  const auto fail = [&](const std::string & what) {
    throw std::invalid_argument("scenario '" + s.id() + "': " + what);
  };
  for (const auto & lane : s.scene.lanes) {
    if (lane.size() < 2) {
      fail("lane polyline with fewer than 2 points");
    }
    for (std::size_t i = 1; i < lane.size(); ++i) {
      if ((lane[i] - lane[i - 1]).norm() == 0.0) {
        fail("lane polyline with repeated consecutive points");
      }
    }
  }
  const std::size_t T = s.adv_ref.steps();
  if (T < 2) {
    fail("trajectories need at least 2 steps");
  }
  if (!(s.adv_ref.dt > 0.0)) {
    fail("dt must be positive");
  }
  if (!s.adv_ref.positions.allFinite()) {
    fail("adversary reference has non-finite positions");
  }
  for (const auto & r : s.refs) {
    if (r.steps() != T || std::abs(r.dt - s.adv_ref.dt) > 1e-12) {
      fail("reference trajectories must share T and dt");
    }
    if (!r.positions.allFinite()) {
      fail("reference trajectory has non-finite positions");
    }
  }
  if (s.refs.empty() || s.target_index >= s.refs.size()) {
    fail("target_index out of range");
  }
  if (s.dims.size() != s.refs.size() + 1) {
    fail("dims must list every reference agent plus the adversary");
  }
  for (const auto & d : s.dims) {
    if (!(d.length > 0.0 && d.width > 0.0)) {
      fail("vehicle dimensions must be positive");
    }
  }
  if (!s.adv_init.position.allFinite() || !s.adv_init.velocity.allFinite()) {
    fail("adversary initial state is not finite");
  }
}

/// Collision-free check over every agent pair, adversary included.
inline bool is_collision_free(const Scenario & s, double clearance = 0.0)
{
  std::vector<const Trajectory *> trajs;
  for (const auto & r : s.refs) {
    trajs.push_back(&r);
  }
  trajs.push_back(&s.adv_ref);
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    for (std::size_t j = i + 1; j < trajs.size(); ++j) {
      for (const double d : min_separation(*trajs[i], s.dims[i], *trajs[j], s.dims[j])) {
        if (d <= clearance) {
          return false;
        }
      }
    }
  }
  return true;
}

/// Applies p -> R(angle) p + shift to every position, velocity and lane point.
inline Scenario rigid_transform(const Scenario & s, double angle, const Vec2 & shift)
{
  const auto move = [&](const Vec2 & p) -> Vec2 { return rotate(p, angle) + shift; };
  const auto move_traj = [&](const Trajectory & tr) {
    Trajectory out = tr;
    for (Eigen::Index t = 0; t < tr.positions.rows(); ++t) {
      out.positions.row(t) = move(tr.positions.row(t).transpose()).transpose();
    }
    return out;
  };
  Scenario out = s;
  for (auto & lane : out.scene.lanes) {
    for (auto & p : lane) {
      p = move(p);
    }
  }
  for (auto & poly : out.scene.drivable_area) {
    for (auto & p : poly) {
      p = move(p);
    }
  }
  for (auto & r : out.refs) {
    r = move_traj(r);
  }
  out.adv_ref = move_traj(s.adv_ref);
  out.adv_init.position = move(s.adv_init.position);
  out.adv_init.velocity = rotate(s.adv_init.velocity, angle);
  return out;
}

}  // namespace crashgen

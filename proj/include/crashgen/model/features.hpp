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
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "crashgen/scene/scenario.hpp"

namespace crashgen::model
{

struct EncoderConfig
{
  std::size_t neighbors = 4;
  std::vector<double> lookahead{15.0, 35.0, 60.0, 90.0, 125.0};  ///< arclengths ahead on the nearest lane, m
  double position_scale = 100.0;
  double velocity_scale = 20.0;

  std::size_t dim() const { return 2 + 2 + 4 * neighbors + 2 + 1 + 2 * lookahead.size(); }
};

/// The adversary's initial body frame: origin at its initial position, +x along its
/// initial velocity (or along the nearest lane when it starts at rest).
struct BodyFrame
{
  Vec2 origin = Vec2::Zero();
  double cos_h = 1.0;
  double sin_h = 0.0;

  Vec2 to_body(const Vec2 & p) const { return rotate_in(p - origin); }
  Vec2 rotate_in(const Vec2 & v) const { return {cos_h * v.x() + sin_h * v.y(), -sin_h * v.x() + cos_h * v.y()}; }
  Vec2 rotate_out(const Vec2 & v) const { return {cos_h * v.x() - sin_h * v.y(), sin_h * v.x() + cos_h * v.y()}; }
  Eigen::Matrix2d rotation() const
  {
    Eigen::Matrix2d r;
    r << cos_h, -sin_h, sin_h, cos_h;
    return r;
  }
};

/// Index of the lane closest to p; near-ties go to the lane best aligned with `dir`.
inline std::optional<std::size_t> nearest_lane(const SceneDescription & scene, const Vec2 & p, const Vec2 & dir)
{
  std::optional<std::size_t> best;
  double best_d = std::numeric_limits<double>::infinity();
  double best_align = -2.0;
  const Vec2 u = dir.norm() > 1e-9 ? Vec2(dir.normalized()) : Vec2::Zero();
  for (std::size_t i = 0; i < scene.lanes.size(); ++i) {
    const auto proj = project_to_polyline(scene.lanes[i], p);
    const double align = proj.tangent.dot(u);
    if (proj.distance < best_d - 1e-6 || (std::abs(proj.distance - best_d) <= 1e-6 && align > best_align)) {
      best = i;
      best_d = proj.distance;
      best_align = align;
    }
  }
  return best;
}

inline BodyFrame body_frame(const Scenario & s)
{
  BodyFrame f;
  f.origin = s.adv_init.position;
  Vec2 dir = s.adv_init.velocity;
  if (dir.norm() <= 1e-6) {
    const auto lane = nearest_lane(s.scene, f.origin, Vec2::Zero());
    dir = lane ? project_to_polyline(s.scene.lanes[*lane], f.origin).tangent : Vec2::UnitX();
  }
  dir.normalize();
  f.cos_h = dir.x();
  f.sin_h = dir.y();
  return f;
}

/// Indices of the k reference agents nearest to the adversary at the first step, nearest first.
inline std::vector<std::size_t> nearest_neighbors(const Scenario & s, std::size_t k)
{
  std::vector<std::size_t> idx(s.refs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<double> d(s.refs.size());
  for (std::size_t i = 0; i < s.refs.size(); ++i) {
    d[i] = (s.refs[i].at(0) - s.adv_init.position).norm();
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return d[a] < d[b]; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

/// Body-frame encoding of the adversary's initial state, its nearest neighbours at the
/// first step (zero-padded) and the geometry of its nearest lane.
inline Eigen::VectorXd encode_features(const Scenario & s, const EncoderConfig & cfg = {})
{
  const BodyFrame f = body_frame(s);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cfg.dim()));
  Eigen::Index i = 0;
  const auto put = [&](const Vec2 & v, double scale) {
    x(i++) = v.x() / scale;
    x(i++) = v.y() / scale;
  };
  put(f.to_body(s.adv_init.position), cfg.position_scale);
  put(f.rotate_in(s.adv_init.velocity), cfg.velocity_scale);

  const auto nn = nearest_neighbors(s, cfg.neighbors);
  for (std::size_t k = 0; k < cfg.neighbors; ++k) {
    if (k < nn.size()) {
      const auto & r = s.refs[nn[k]];
      put(f.to_body(r.at(0)), cfg.position_scale);
      put(f.rotate_in(step_velocity(r, 0) - s.adv_init.velocity), cfg.velocity_scale);
    } else {
      i += 4;
    }
  }

  const auto lane = nearest_lane(s.scene, s.adv_init.position, f.rotate_out(Vec2::UnitX()));
  if (lane) {
    const auto & poly = s.scene.lanes[*lane];
    const auto cum = cumulative_lengths(poly);
    const auto proj = project_to_polyline(poly, s.adv_init.position);
    put(f.rotate_in(proj.tangent), 1.0);
    x(i++) = proj.signed_offset / cfg.position_scale;
    for (const double ahead : cfg.lookahead) {
      put(f.to_body(point_at_arclength(poly, cum, proj.arclength + ahead)), cfg.position_scale);
    }
  }
  return x;
}

}  // namespace crashgen::model

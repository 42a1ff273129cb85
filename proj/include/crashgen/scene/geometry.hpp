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
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

namespace crashgen
{

using Vec2 = Eigen::Vector2d;
using Polyline = std::vector<Vec2>;

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a)
{
  double w = std::remainder(a, 2.0 * std::numbers::pi);
  if (w <= -std::numbers::pi) {
    w += 2.0 * std::numbers::pi;
  }
  return w;
}

inline double cross2(const Vec2 & a, const Vec2 & b) { return a.x() * b.y() - a.y() * b.x(); }

inline Vec2 rotate(const Vec2 & v, double angle)
{
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y()};
}

/// Vehicle footprint, meters.
struct Dims
{
  double length = 4.5;
  double width = 2.0;

  double half_diagonal() const { return 0.5 * std::hypot(length, width); }
};

struct OrientedBox
{
  Vec2 center = Vec2::Zero();
  double heading = 0.0;
  Dims dims;

  std::array<Vec2, 4> corners() const
  {
    const Vec2 f{std::cos(heading), std::sin(heading)};
    const Vec2 l{-f.y(), f.x()};
    const Vec2 hf = 0.5 * dims.length * f;
    const Vec2 hl = 0.5 * dims.width * l;
    return {center + hf + hl, center - hf + hl, center - hf - hl, center + hf - hl};
  }
};

inline double point_segment_distance(const Vec2 & p, const Vec2 & a, const Vec2 & b)
{
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

/// Signed distance between two oriented rectangles: the Euclidean gap when
/// disjoint, minus the minimum separating-axis penetration when they overlap.
inline double signed_separation(const OrientedBox & a, const OrientedBox & b)
{
  const auto ca = a.corners();
  const auto cb = b.corners();
  const std::array<Vec2, 4> axes{
    Vec2{std::cos(a.heading), std::sin(a.heading)}, Vec2{-std::sin(a.heading), std::cos(a.heading)},
    Vec2{std::cos(b.heading), std::sin(b.heading)}, Vec2{-std::sin(b.heading), std::cos(b.heading)}};

  double min_overlap = std::numeric_limits<double>::infinity();
  bool separated = false;
  for (const auto & axis : axes) {
    double amin = std::numeric_limits<double>::infinity();
    double amax = -amin;
    double bmin = amin;
    double bmax = -amin;
    for (int i = 0; i < 4; ++i) {
      const double pa = ca[i].dot(axis);
      const double pb = cb[i].dot(axis);
      amin = std::min(amin, pa);
      amax = std::max(amax, pa);
      bmin = std::min(bmin, pb);
      bmax = std::max(bmax, pb);
    }
    const double overlap = std::min(amax, bmax) - std::max(amin, bmin);
    if (overlap < 0.0) {
      separated = true;
      break;
    }
    min_overlap = std::min(min_overlap, overlap);
  }
  if (!separated) {
    return -min_overlap;
  }

  double d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      d = std::min(d, point_segment_distance(ca[i], cb[j], cb[(j + 1) % 4]));
      d = std::min(d, point_segment_distance(cb[i], ca[j], ca[(j + 1) % 4]));
    }
  }
  return d;
}

inline bool boxes_overlap(const OrientedBox & a, const OrientedBox & b)
{
  return signed_separation(a, b) < 0.0;
}

// Constant-velocity extrapolation of a relative state (dp, dv) over [0, horizon].

struct ClosestApproach
{
  double time = 0.0;
  double distance = 0.0;
};

inline ClosestApproach closest_approach(const Vec2 & dp, const Vec2 & dv, double horizon)
{
  const double vv = dv.squaredNorm();
  double s = 0.0;
  if (vv > 1e-18) {
    s = std::clamp(-dp.dot(dv) / vv, 0.0, horizon);
  }
  return {s, (dp + s * dv).norm()};
}

/// Smallest s in [0, horizon] with |dp + s dv| <= radius, or +inf.
inline double contact_time(const Vec2 & dp, const Vec2 & dv, double radius, double horizon)
{
  const double c = dp.squaredNorm() - radius * radius;
  if (c <= 0.0) {
    return 0.0;
  }
  const double a = dv.squaredNorm();
  const double b = 2.0 * dp.dot(dv);
  const double disc = b * b - 4.0 * a * c;
  if (a <= 1e-18 || disc < 0.0) {
    return std::numeric_limits<double>::infinity();
  }
  const double s = (-b - std::sqrt(disc)) / (2.0 * a);
  if (s >= 0.0 && s <= horizon) {
    return s;
  }
  return std::numeric_limits<double>::infinity();
}

// Polyline helpers.

inline std::vector<double> cumulative_lengths(const Polyline & poly)
{
  std::vector<double> s(poly.size(), 0.0);
  for (std::size_t i = 1; i < poly.size(); ++i) {
    s[i] = s[i - 1] + (poly[i] - poly[i - 1]).norm();
  }
  return s;
}

struct PolylineProjection
{
  std::size_t segment = 0;
  double arclength = 0.0;
  double distance = std::numeric_limits<double>::infinity();
  double signed_offset = 0.0;  ///< positive when the point lies left of the polyline
  Vec2 point = Vec2::Zero();
  Vec2 tangent = Vec2::UnitX();
};

inline PolylineProjection project_to_polyline(const Polyline & poly, const Vec2 & p)
{
  PolylineProjection best;
  double s0 = 0.0;
  for (std::size_t i = 0; i + 1 < poly.size(); ++i) {
    const Vec2 ab = poly[i + 1] - poly[i];
    const double len = ab.norm();
    const double t = std::clamp((p - poly[i]).dot(ab) / (len * len), 0.0, 1.0);
    const Vec2 q = poly[i] + t * ab;
    const double d = (p - q).norm();
    if (d < best.distance) {
      best.segment = i;
      best.arclength = s0 + t * len;
      best.distance = d;
      best.point = q;
      best.tangent = ab / len;
      best.signed_offset = cross2(best.tangent, p - q) >= 0.0 ? d : -d;
    }
    s0 += len;
  }
  return best;
}

inline double distance_to_polyline(const Polyline & poly, const Vec2 & p)
{
  return project_to_polyline(poly, p).distance;
}

/// Point at arclength s; beyond either end the first/last segment is extended linearly.
inline Vec2 point_at_arclength(const Polyline & poly, const std::vector<double> & cum, double s)
{
  std::size_t i = 0;
  if (s >= cum.back()) {
    i = poly.size() - 2;
  } else if (s > 0.0) {
    i = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), s) - cum.begin()) - 1;
    i = std::min(i, poly.size() - 2);
  }
  const Vec2 ab = poly[i + 1] - poly[i];
  const double len = cum[i + 1] - cum[i];
  return poly[i] + ab * ((s - cum[i]) / len);
}

inline Vec2 point_at_arclength(const Polyline & poly, double s)
{
  return point_at_arclength(poly, cumulative_lengths(poly), s);
}

}  // namespace crashgen

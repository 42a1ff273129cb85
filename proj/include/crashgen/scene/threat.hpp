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

#include <limits>

#include "crashgen/scene/geometry.hpp"

namespace crashgen
{

/// Thresholds of the constant-velocity threat predicate used by the evaluated
/// policy (and by the generator to keep reference scenes free of false alarms).
struct ThreatThresholds
{
  double d_min = 2.0;    ///< minimum predicted center separation, m
  double t_min = 1.5;    ///< minimum time to contact, s
  double horizon = 5.0;  ///< extrapolation horizon, s
};

struct ThreatAssessment
{
  double time_to_contact = std::numeric_limits<double>::infinity();
  double min_distance = std::numeric_limits<double>::infinity();

  bool triggers(const ThreatThresholds & th) const
  {
    return time_to_contact < th.t_min || min_distance < th.d_min;
  }
};

/// Time to contact and minimum center distance under constant-velocity extrapolation.
/// Contact means the center distance drops to `contact_radius` (sum of half-diagonals).
inline ThreatAssessment assess_threat(
  const Vec2 & x, const Vec2 & v, const Vec2 & x_other, const Vec2 & v_other,
  double contact_radius, double horizon)
{
  const Vec2 dp = x - x_other;
  const Vec2 dv = v - v_other;
  return {contact_time(dp, dv, contact_radius, horizon), closest_approach(dp, dv, horizon).distance};
}

}  // namespace crashgen

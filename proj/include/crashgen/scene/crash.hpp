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
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <numbers>

#include "crashgen/policy/policy.hpp"
#include "crashgen/scene/scenario.hpp"

namespace crashgen
{

enum class CrashType { Contrasting, Chasing, SideLeft, SideRight };

inline const char * to_string(CrashType c)
{
  switch (c) {
    case CrashType::Contrasting:
      return "Contrasting";
    case CrashType::Chasing:
      return "Chasing";
    case CrashType::SideLeft:
      return "SideLeft";
    case CrashType::SideRight:
      return "SideRight";
  }
  return "?";
}

inline CrashType crash_type_from_string(std::string_view s)
{
  for (auto c : {CrashType::Contrasting, CrashType::Chasing, CrashType::SideLeft, CrashType::SideRight}) {
    if (s == to_string(c)) {
      return c;
    }
  }
  throw std::invalid_argument("unknown crash type '" + std::string(s) + "'");
}

struct CrashRecord
{
  std::string scenario_id;
  bool collided = false;
  std::optional<std::size_t> impact_t;
  double v_a = 0.0;
  double dvx = 0.0;
  double dvy = 0.0;
  double gamma = 0.0;
  std::optional<CrashType> crash_type;
  bool responded = false;
  std::optional<double> t_r;
};

/// Quarter-plane partition of the heading difference. Near-aligned impacts are Chasing
/// whether the adversary is behind or ahead of the target. Side impacts are named after
/// the side of the target the adversary is on; the sign of gamma only breaks a dead tie.
inline CrashType classify_crash_type(double gamma, const Vec2 & rel_pos_body)
{
  constexpr double q = std::numbers::pi / 4.0;
  const double a = std::abs(gamma);
  if (a >= 3.0 * q) {
    return CrashType::Contrasting;
  }
  if (a > q) {
    const double side = rel_pos_body.y() != 0.0 ? rel_pos_body.y() : gamma;
    return side > 0.0 ? CrashType::SideLeft : CrashType::SideRight;
  }
  return CrashType::Chasing;
}

inline CrashRecord featurize_crash(const Scenario & s, const Trajectory & adv, const policy::PolicyLog & log)
{
  CrashRecord rec;
  rec.scenario_id = s.id();
  if (!log.impact_index) {
    return rec;
  }
  const std::size_t impact = *log.impact_index;
  const std::size_t t = impact == 0 ? 0 : impact - 1;
  const Trajectory & tgt = log.target;
  const double h_adv = headings(adv)[t];
  const double h_tgt = headings(tgt)[t];
  const Vec2 v_adv = step_velocity(adv, t);
  const Vec2 v_tgt = step_velocity(tgt, t);
  const Vec2 dv_body = rotate(v_adv - v_tgt, -h_tgt);
  const Vec2 rel_body = rotate(adv.at(t) - tgt.at(t), -h_tgt);

  rec.collided = true;
  rec.impact_t = impact;
  rec.v_a = v_adv.norm();
  rec.dvx = std::abs(dv_body.x());
  rec.dvy = std::abs(dv_body.y());
  rec.gamma = wrap_angle(h_adv - h_tgt);
  rec.crash_type = classify_crash_type(rec.gamma, rel_body);
  if (log.first_brake_time && *log.first_brake_time < static_cast<double>(impact) * s.dt()) {
    rec.responded = true;
    rec.t_r = log.first_brake_time;
  }
  return rec;
}

}  // namespace crashgen

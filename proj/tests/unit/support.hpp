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

#include <vector>

#include "crashgen/scene/scenario.hpp"

namespace crashgen::test
{

/// Constant-velocity trajectory.
inline Trajectory line(const Vec2 & start, const Vec2 & vel, std::size_t T, double dt)
{
  Trajectory tr;
  tr.dt = dt;
  tr.positions.resize(static_cast<Eigen::Index>(T), 2);
  for (std::size_t t = 0; t < T; ++t) {
    tr.positions.row(static_cast<Eigen::Index>(t)) = (start + vel * (static_cast<double>(t) * dt)).transpose();
  }
  return tr;
}

/// Scenario with the given references, the adversary following `adv` from its first point.
inline Scenario scenario(std::vector<Trajectory> refs, Trajectory adv, std::size_t target = 0, std::string id = "fixture")
{
  Scenario s;
  s.scene.scene_id = std::move(id);
  s.scene.lanes = {{Vec2{-500.0, 0.0}, Vec2{500.0, 0.0}}};
  s.refs = std::move(refs);
  s.adv_ref = std::move(adv);
  s.adv_init.position = s.adv_ref.at(0);
  s.adv_init.velocity = step_velocity(s.adv_ref, 0);
  s.target_index = target;
  s.dims.assign(s.refs.size() + 1, Dims{});
  return s;
}

}  // namespace crashgen::test

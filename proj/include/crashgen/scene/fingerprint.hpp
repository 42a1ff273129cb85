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

#include <string>
#include <vector>

#include "crashgen/scene/scenario.hpp"
#include "crashgen/util/hash.hpp"

namespace crashgen
{

inline void hash_into(util::Fingerprint & fp, const Trajectory & tr)
{
  fp.value(tr.dt).values(tr.positions);
}

inline void hash_into(util::Fingerprint & fp, const Scenario & s)
{
  fp.text(s.id());
  for (const auto & lane : s.scene.lanes) {
    for (const auto & p : lane) {
      fp.value(p.x()).value(p.y());
    }
  }
  for (const auto & r : s.refs) {
    hash_into(fp, r);
  }
  hash_into(fp, s.adv_ref);
  fp.value(s.adv_init.position.x()).value(s.adv_init.position.y());
  fp.value(s.adv_init.velocity.x()).value(s.adv_init.velocity.y());
  fp.value(static_cast<std::uint64_t>(s.target_index));
  for (const auto & d : s.dims) {
    fp.value(d.length).value(d.width);
  }
}

inline std::string dataset_fingerprint(const std::vector<Scenario> & data)
{
  util::Fingerprint fp;
  fp.value(static_cast<std::uint64_t>(data.size()));
  for (const auto & s : data) {
    hash_into(fp, s);
  }
  return fp.hex();
}

}  // namespace crashgen

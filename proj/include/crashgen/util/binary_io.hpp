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

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace crashgen::util
{

// Checkpoints are one line of JSON (the header) followed by a raw
// little-endian float64 payload whose layout the header describes.

inline void write_f64_le(std::ostream & out, const double * data, std::size_t count)
{
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, data + i, sizeof bits);
    unsigned char buf[8];
    for (int b = 0; b < 8; ++b) {
      buf[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xffU);
    }
    out.write(reinterpret_cast<const char *>(buf), 8);
  }
  if (!out) {
    throw std::runtime_error("failed writing float64 payload");
  }
}

inline void read_f64_le(std::istream & in, double * data, std::size_t count)
{
  for (std::size_t i = 0; i < count; ++i) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char *>(buf), 8);
    if (in.gcount() != 8) {
      throw std::runtime_error("truncated float64 payload");
    }
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(buf[b]) << (8 * b);
    }
    std::memcpy(data + i, &bits, sizeof bits);
  }
}

inline void write_header(std::ostream & out, const nlohmann::json & header)
{
  out << header.dump() << '\n';
}

inline nlohmann::json read_header(std::istream & in)
{
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("missing checkpoint header");
  }
  return nlohmann::json::parse(line);
}

}  // namespace crashgen::util

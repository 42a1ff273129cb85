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
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace crashgen::util
{

/// FNV-1a 64-bit. Used for fingerprints that tie checkpoints to the data and
/// models they were built from; not a cryptographic hash.
class Fingerprint
{
public:
  Fingerprint & bytes(const void * data, std::size_t size)
  {
    const auto * p = static_cast<const unsigned char *>(data);
    for (std::size_t i = 0; i < size; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }

  Fingerprint & text(std::string_view s) { return bytes(s.data(), s.size()); }

  Fingerprint & value(double x) { return bytes(&x, sizeof x); }

  Fingerprint & value(std::uint64_t x) { return bytes(&x, sizeof x); }

  Fingerprint & values(std::span<const double> xs) { return bytes(xs.data(), xs.size_bytes()); }

  Fingerprint & values(const Eigen::Ref<const Eigen::MatrixXd> & m)
  {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        value(m(i, j));
      }
    }
    return *this;
  }

  std::uint64_t digest() const { return state_; }

  std::string hex() const
  {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
    return buf;
  }

private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string fingerprint_text(std::string_view s)
{
  return Fingerprint{}.text(s).hex();
}

}  // namespace crashgen::util

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
#include <random>
#include <string_view>

#include <Eigen/Dense>

namespace crashgen::util
{

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a master seed, a stream name and an index.
/// Stages and per-item workers use this so results do not depend on evaluation order.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index = 0)
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(master ^ h) + splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t master, std::string_view stream, std::uint64_t index = 0)
{
  return Rng{derive_seed(master, stream, index)};
}

inline double uniform(Rng & rng, double lo, double hi)
{
  return std::uniform_real_distribution<double>{lo, hi}(rng);
}

inline Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng & rng)
{
  std::normal_distribution<double> normal{0.0, 1.0};
  Eigen::MatrixXd m(rows, cols);
  // column-major fill keeps the draw order independent of Eigen internals
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      m(i, j) = normal(rng);
    }
  }
  return m;
}

inline Eigen::VectorXd gaussian_vector(Eigen::Index n, Rng & rng)
{
  return gaussian_matrix(n, 1, rng);
}

}  // namespace crashgen::util

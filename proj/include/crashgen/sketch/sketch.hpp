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
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "crashgen/util/binary_io.hpp"
#include "crashgen/util/rng.hpp"

namespace crashgen::sketch
{

/// Two-sided randomized sketch of a symmetric operator H: W = Psi H, Y = H Phi.
struct SketchPair
{
  Eigen::MatrixXd Psi;  ///< l x n
  Eigen::MatrixXd Phi;  ///< n x s
  Eigen::MatrixXd W;    ///< l x n
  Eigen::MatrixXd Y;    ///< n x s
  std::uint64_t seed = 0;
  std::size_t hvp_calls = 0;

  Eigen::Index n() const { return Phi.rows(); }
  Eigen::Index s() const { return Phi.cols(); }
  Eigen::Index l() const { return Psi.rows(); }
};

struct Provenance
{
  std::string model_fingerprint;
  std::string space = "full";
  double fraction = 1.0;
};

/// Rank-k PSD factorization U diag(D) U^T.
struct SketchedCurvature
{
  Eigen::MatrixXd U;  ///< n x k, orthonormal columns
  Eigen::VectorXd D;  ///< k, non-negative, non-increasing
  std::size_t s = 0;
  std::size_t l = 0;
  std::uint64_t seed = 0;
  Provenance provenance;

  Eigen::Index n() const { return U.rows(); }
  Eigen::Index rank() const { return U.cols(); }
  Eigen::MatrixXd dense() const { return U * D.asDiagonal() * U.transpose(); }
};

class DegenerateSketch : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// `hvp(v)` returns H v. Uses exactly s + l products.
template <class HVP>
SketchPair build_sketch(HVP && hvp, Eigen::Index n, Eigen::Index s, Eigen::Index l, std::uint64_t seed)
{
  if (!(1 <= s && s <= l && l <= n)) {
    throw std::invalid_argument(
      "build_sketch: need 1 <= s <= l <= n, got s=" + std::to_string(s) + " l=" + std::to_string(l) +
      " n=" + std::to_string(n));
  }
  SketchPair p;
  p.seed = seed;
  auto rng_phi = util::make_rng(seed, "sketch-phi");
  auto rng_psi = util::make_rng(seed, "sketch-psi");
  p.Phi = util::gaussian_matrix(n, s, rng_phi);
  p.Psi = util::gaussian_matrix(l, n, rng_psi);
  p.Y.resize(n, s);
  p.W.resize(l, n);
  for (Eigen::Index j = 0; j < s; ++j) {
    p.Y.col(j) = hvp(Eigen::VectorXd(p.Phi.col(j)));
    ++p.hvp_calls;
  }
  // rows of W = Psi H come from H Psi^T by symmetry
  for (Eigen::Index i = 0; i < l; ++i) {
    p.W.row(i) = hvp(Eigen::VectorXd(p.Psi.row(i).transpose())).transpose();
    ++p.hvp_calls;
  }
  return p;
}

inline Eigen::MatrixXd thin_q(const Eigen::MatrixXd & A)
{
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
  return qr.householderQ() * Eigen::MatrixXd::Identity(A.rows(), A.cols());
}

struct ThinQr
{
  Eigen::MatrixXd Q;
  Eigen::MatrixXd R;
};

inline ThinQr thin_qr(const Eigen::MatrixXd & A)
{
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
  const Eigen::Index c = A.cols();
  ThinQr out;
  out.Q = qr.householderQ() * Eigen::MatrixXd::Identity(A.rows(), c);
  out.R = qr.matrixQR().topRows(c).triangularView<Eigen::Upper>();
  return out;
}

/// Solves T X = B for upper-triangular T, falling back to the pseudo-inverse when a pivot
/// is below 1e-12 |T|_F.
inline Eigen::MatrixXd triangular_solve_or_pinv(const Eigen::MatrixXd & T, const Eigen::MatrixXd & B)
{
  const double tol = 1e-12 * T.norm();
  const bool degenerate = (T.diagonal().array().abs() <= tol).any();
  if (!degenerate) {
    return T.triangularView<Eigen::Upper>().solve(B);
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(T);
  cod.setThreshold(1e-12);
  return cod.pseudoInverse() * B;
}

struct LowRank
{
  Eigen::MatrixXd Q;  ///< n x s
  Eigen::MatrixXd X;  ///< s x n
};

/// H ~ Q X from the two-sided sketch.
inline LowRank low_rank(const SketchPair & p)
{
  if (p.Y.cwiseAbs().maxCoeff() == 0.0) {
    throw DegenerateSketch("low_rank: the range sketch Y is identically zero");
  }
  LowRank out;
  out.Q = thin_q(p.Y);
  const ThinQr f = thin_qr(p.Psi * out.Q);
  out.X = triangular_solve_or_pinv(f.R, f.Q.transpose() * p.W);
  return out;
}

struct LowRankSym
{
  Eigen::MatrixXd U;  ///< n x 2s
  Eigen::MatrixXd S;  ///< 2s x 2s, symmetric
};

inline LowRankSym low_rank_sym(const SketchPair & p)
{
  const LowRank lr = low_rank(p);
  const Eigen::Index s = lr.Q.cols();
  if (lr.Q.rows() < 2 * s) {
    throw std::invalid_argument("low_rank_sym: need n >= 2s");
  }
  Eigen::MatrixXd C(lr.Q.rows(), 2 * s);
  C << lr.Q, lr.X.transpose();
  const ThinQr f = thin_qr(C);
  const Eigen::MatrixXd T1 = f.R.leftCols(s);
  const Eigen::MatrixXd T2 = f.R.rightCols(s);
  const Eigen::MatrixXd P = T1 * T2.transpose();
  LowRankSym out;
  out.U = f.Q;
  out.S = 0.5 * (P + P.transpose());
  return out;
}

/// Eigendecomposition of the symmetric core, negative eigenvalues clamped to zero,
/// sorted descending and truncated to rank k.
inline SketchedCurvature low_rank_psd(const SketchPair & p, Eigen::Index k)
{
  const LowRankSym sym = low_rank_sym(p);
  if (k < 1 || k > sym.S.rows()) {
    throw std::invalid_argument("low_rank_psd: rank must be in [1, 2s]");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym.S);
  const Eigen::VectorXd ev = es.eigenvalues();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(ev.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return ev(a) > ev(b); });
  const Eigen::MatrixXd UV = sym.U * es.eigenvectors();
  SketchedCurvature c;
  c.U.resize(UV.rows(), k);
  c.D.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto src = order[static_cast<std::size_t>(j)];
    c.U.col(j) = UV.col(src);
    c.D(j) = std::max(ev(src), 0.0);
  }
  c.s = static_cast<std::size_t>(p.s());
  c.l = static_cast<std::size_t>(p.l());
  c.seed = p.seed;
  return c;
}

struct SketchSizes
{
  Eigen::Index k;
  Eigen::Index s;
  Eigen::Index l;
};

/// Default sizes: s = 2k, l = 2s + 1, capped by n.
inline SketchSizes default_sizes(Eigen::Index n, Eigen::Index k)
{
  const Eigen::Index s = std::min<Eigen::Index>(2 * k, n / 2);
  const Eigen::Index l = std::min<Eigen::Index>(2 * s + 1, n);
  return {std::min(k, 2 * s), s, l};
}

template <class HVP>
SketchedCurvature sketch_curvature(
  HVP && hvp, Eigen::Index n, Eigen::Index k, std::uint64_t seed, Provenance prov = {}, Eigen::Index s = 0,
  Eigen::Index l = 0)
{
  SketchSizes z = default_sizes(n, k);
  if (s > 0) {
    z.s = s;
    z.l = l > 0 ? l : std::min<Eigen::Index>(2 * s + 1, n);
  }
  auto c = low_rank_psd(build_sketch(hvp, n, z.s, z.l, seed), z.k);
  c.provenance = std::move(prov);
  return c;
}

struct Spectrum
{
  std::vector<double> values;
  std::vector<double> energy;  ///< cumulative fraction of the captured trace
};

inline Spectrum spectrum(const SketchedCurvature & c)
{
  Spectrum sp;
  sp.values.assign(c.D.data(), c.D.data() + c.D.size());
  const double total = c.D.sum();
  double acc = 0.0;
  for (const double v : sp.values) {
    acc += v;
    sp.energy.push_back(total > 0.0 ? acc / total : 0.0);
  }
  return sp;
}

/// Mean squared canonical correlation between the leading k-dimensional subspaces.
inline double gip_overlap(const SketchedCurvature & full, const SketchedCurvature & partial, Eigen::Index k)
{
  if (full.n() != partial.n()) {
    throw std::invalid_argument("gip_overlap: curvatures live in different spaces");
  }
  if (k < 1 || k > full.rank() || k > partial.rank()) {
    throw std::invalid_argument("gip_overlap: k exceeds a curvature rank");
  }
  return (full.U.leftCols(k).transpose() * partial.U.leftCols(k)).squaredNorm() / static_cast<double>(k);
}

inline void save_curvature(const std::string & path, const SketchedCurvature & c)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open '" + path + "' for writing");
  }
  util::write_header(
    out, nlohmann::json{
           {"kind", "sketched-curvature"},
           {"n", c.n()},
           {"k", c.rank()},
           {"s", c.s},
           {"l", c.l},
           {"seed", c.seed},
           {"provenance",
            {{"model_fingerprint", c.provenance.model_fingerprint},
             {"space", c.provenance.space},
             {"fraction", c.provenance.fraction}}}});
  util::write_f64_le(out, c.U.data(), static_cast<std::size_t>(c.U.size()));
  util::write_f64_le(out, c.D.data(), static_cast<std::size_t>(c.D.size()));
}

inline SketchedCurvature load_curvature(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open '" + path + "'");
  }
  const auto h = util::read_header(in);
  if (h.value("kind", "") != "sketched-curvature") {
    throw std::runtime_error(path + ": not a curvature checkpoint");
  }
  SketchedCurvature c;
  const auto n = h.at("n").get<Eigen::Index>();
  const auto k = h.at("k").get<Eigen::Index>();
  c.s = h.at("s").get<std::size_t>();
  c.l = h.at("l").get<std::size_t>();
  c.seed = h.at("seed").get<std::uint64_t>();
  const auto & p = h.at("provenance");
  c.provenance = {
    p.at("model_fingerprint").get<std::string>(), p.at("space").get<std::string>(), p.at("fraction").get<double>()};
  c.U.resize(n, k);
  c.D.resize(k);
  util::read_f64_le(in, c.U.data(), static_cast<std::size_t>(c.U.size()));
  util::read_f64_le(in, c.D.data(), static_cast<std::size_t>(c.D.size()));
  return c;
}

}  // namespace crashgen::sketch

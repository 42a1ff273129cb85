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
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crashgen/scene/crash.hpp"
#include "crashgen/util/rng.hpp"

namespace crashgen::cluster
{

struct FeatureMatrix
{
  Eigen::MatrixXd Z;  ///< rows = records, standardized
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
  std::vector<std::string> columns;
  std::string missing_tr_policy;
  double tr_fill = 0.0;

  Eigen::Index rows() const { return Z.rows(); }
};

namespace detail
{

inline double mean_of(const std::vector<double> & v)
{
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Population standard deviation.
inline double pstd_of(const std::vector<double> & v)
{
  if (v.empty()) {
    return 0.0;
  }
  const double m = mean_of(v);
  double acc = 0.0;
  for (const double x : v) {
    acc += (x - m) * (x - m);
  }
  return std::sqrt(acc / static_cast<double>(v.size()));
}

/// Sample standard deviation (n - 1), zero for fewer than two values.
inline double sstd_of(const std::vector<double> & v)
{
  if (v.size() < 2) {
    return 0.0;
  }
  const double m = mean_of(v);
  double acc = 0.0;
  for (const double x : v) {
    acc += (x - m) * (x - m);
  }
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

}  // namespace detail

/// Z-scored (v_a, dvx, dvy, gamma[, t_r]). Missing t_r becomes max + one std of the
/// observed values before standardization; degenerate columns divide by 1.
inline FeatureMatrix build_features(const std::vector<CrashRecord> & records, bool include_tr = true)
{
  if (records.size() < 2) {
    throw std::invalid_argument("build_features: need at least 2 crash records");
  }
  for (const auto & r : records) {
    if (!r.collided) {
      throw std::invalid_argument("build_features: record '" + r.scenario_id + "' is not a collision");
    }
  }
  FeatureMatrix fm;
  fm.columns = {"v_a", "dvx", "dvy", "gamma"};
  if (include_tr) {
    fm.columns.push_back("t_r");
  }
  const auto N = static_cast<Eigen::Index>(records.size());
  const auto d = static_cast<Eigen::Index>(fm.columns.size());
  Eigen::MatrixXd X(N, d);
  std::vector<double> observed;
  for (const auto & r : records) {
    if (r.t_r) {
      observed.push_back(*r.t_r);
    }
  }
  if (include_tr) {
    fm.missing_tr_policy = "max_plus_std";
    fm.tr_fill = observed.empty() ? 0.0 : *std::max_element(observed.begin(), observed.end()) + detail::pstd_of(observed);
  } else {
    fm.missing_tr_policy = "excluded";
  }
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto & r = records[static_cast<std::size_t>(i)];
    X(i, 0) = r.v_a;
    X(i, 1) = r.dvx;
    X(i, 2) = r.dvy;
    X(i, 3) = r.gamma;
    if (include_tr) {
      X(i, 4) = r.t_r.value_or(fm.tr_fill);
    }
  }
  fm.mean = X.colwise().mean().transpose();
  fm.std.resize(d);
  fm.Z.resize(N, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double s = std::sqrt((X.col(j).array() - fm.mean(j)).square().mean());
    fm.std(j) = s > 1e-12 ? s : 1.0;
    fm.Z.col(j) = (X.col(j).array() - fm.mean(j)) / fm.std(j);
  }
  return fm;
}

struct Clustering
{
  std::vector<int> assignments;
  Eigen::MatrixXd centroids;  ///< k x d
  double inertia = 0.0;
  std::vector<double> inertia_trace;  ///< per Lloyd iteration of the returned run
};

namespace detail
{

inline std::size_t distinct_rows(const Eigen::MatrixXd & X)
{
  std::set<std::vector<double>> seen;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(X.cols()));
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      row[static_cast<std::size_t>(j)] = X(i, j);
    }
    seen.insert(std::move(row));
  }
  return seen.size();
}

inline double assign(const Eigen::MatrixXd & X, const Eigen::MatrixXd & C, std::vector<int> & a)
{
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    Eigen::Index best = 0;
    const double d = (C.rowwise() - X.row(i)).rowwise().squaredNorm().minCoeff(&best);
    a[static_cast<std::size_t>(i)] = static_cast<int>(best);
    inertia += d;
  }
  return inertia;
}

inline Clustering lloyd(const Eigen::MatrixXd & X, Eigen::Index k, util::Rng & rng, std::size_t max_iterations)
{
  const Eigen::Index N = X.rows();
  // k-means++ seeding
  Eigen::MatrixXd C(k, X.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, N - 1);
  C.row(0) = X.row(first(rng));
  Eigen::VectorXd d2 = (X.rowwise() - C.row(0)).rowwise().squaredNorm();
  for (Eigen::Index c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double u = util::uniform(rng, 0.0, total);
      for (pick = 0; pick < N - 1; ++pick) {
        u -= d2(pick);
        if (u < 0.0) {
          break;
        }
      }
    } else {
      pick = first(rng);
    }
    C.row(c) = X.row(pick);
    d2 = d2.cwiseMin((X.rowwise() - C.row(c)).rowwise().squaredNorm());
  }

  Clustering out;
  out.assignments.assign(static_cast<std::size_t>(N), 0);
  double inertia = assign(X, C, out.assignments);
  out.inertia_trace.push_back(inertia);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(k, X.cols());
    std::vector<Eigen::Index> count(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < N; ++i) {
      const int a = out.assignments[static_cast<std::size_t>(i)];
      sum.row(a) += X.row(i);
      ++count[static_cast<std::size_t>(a)];
    }
    for (Eigen::Index c = 0; c < k; ++c) {
      if (count[static_cast<std::size_t>(c)] > 0) {
        C.row(c) = sum.row(c) / static_cast<double>(count[static_cast<std::size_t>(c)]);
      }
    }
    // empty clusters restart at the point farthest from its centroid
    for (Eigen::Index c = 0; c < k; ++c) {
      if (count[static_cast<std::size_t>(c)] == 0) {
        Eigen::Index far = 0;
        double best = -1.0;
        for (Eigen::Index i = 0; i < N; ++i) {
          const double d = (X.row(i) - C.row(out.assignments[static_cast<std::size_t>(i)])).squaredNorm();
          if (d > best && count[static_cast<std::size_t>(out.assignments[static_cast<std::size_t>(i)])] > 1) {
            best = d;
            far = i;
          }
        }
        --count[static_cast<std::size_t>(out.assignments[static_cast<std::size_t>(far)])];
        out.assignments[static_cast<std::size_t>(far)] = static_cast<int>(c);
        count[static_cast<std::size_t>(c)] = 1;
        C.row(c) = X.row(far);
      }
    }
    std::vector<int> next(out.assignments.size());
    const double next_inertia = assign(X, C, next);
    out.inertia_trace.push_back(next_inertia);
    const bool stable = next == out.assignments;
    out.assignments = std::move(next);
    inertia = next_inertia;
    if (stable) {
      break;
    }
  }
  out.centroids = C;
  out.inertia = inertia;
  return out;
}

}  // namespace detail

/// Lloyd's k-means from k-means++ seeds, best of `restarts` runs by inertia.
inline Clustering kmeans(
  const Eigen::MatrixXd & X, Eigen::Index k, std::uint64_t seed, std::size_t restarts = 10,
  std::size_t max_iterations = 300)
{
  if (k < 1 || k > X.rows()) {
    throw std::invalid_argument("kmeans: k must be in [1, rows]");
  }
  if (static_cast<std::size_t>(k) > detail::distinct_rows(X)) {
    throw std::invalid_argument("kmeans: k exceeds the number of distinct rows");
  }
  Clustering best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
    auto rng = util::make_rng(seed, "kmeans", r);
    Clustering c = detail::lloyd(X, k, rng, max_iterations);
    if (c.inertia < best.inertia) {
      best = std::move(c);
    }
  }
  return best;
}

inline Clustering kmeans(
  const FeatureMatrix & f, Eigen::Index k, std::uint64_t seed, std::size_t restarts = 10,
  std::size_t max_iterations = 300)
{
  return kmeans(f.Z, k, seed, restarts, max_iterations);
}

/// Mean Euclidean silhouette; members of singleton clusters score 0.
inline double silhouette(const Eigen::MatrixXd & X, const std::vector<int> & a)
{
  const auto N = static_cast<Eigen::Index>(a.size());
  if (N != X.rows()) {
    throw std::invalid_argument("silhouette: assignment length does not match rows");
  }
  const int k = a.empty() ? 0 : *std::max_element(a.begin(), a.end()) + 1;
  std::vector<Eigen::Index> size(static_cast<std::size_t>(std::max(k, 0)), 0);
  for (const int c : a) {
    if (c < 0) {
      throw std::invalid_argument("silhouette: negative cluster label");
    }
    ++size[static_cast<std::size_t>(c)];
  }
  if (k < 2) {
    throw std::invalid_argument("silhouette: need at least two clusters");
  }
  for (const auto s : size) {
    if (s == 0) {
      throw std::invalid_argument("silhouette: empty cluster");
    }
  }
  double total = 0.0;
  std::vector<double> sum(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < N; ++i) {
    std::fill(sum.begin(), sum.end(), 0.0);
    for (Eigen::Index j = 0; j < N; ++j) {
      if (j != i) {
        sum[static_cast<std::size_t>(a[static_cast<std::size_t>(j)])] += (X.row(i) - X.row(j)).norm();
      }
    }
    const auto own = static_cast<std::size_t>(a[static_cast<std::size_t>(i)]);
    if (size[own] == 1) {
      continue;
    }
    const double ai = sum[own] / static_cast<double>(size[own] - 1);
    double bi = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < sum.size(); ++c) {
      if (c != own) {
        bi = std::min(bi, sum[c] / static_cast<double>(size[c]));
      }
    }
    const double m = std::max(ai, bi);
    total += m > 0.0 ? (bi - ai) / m : 0.0;
  }
  return total / static_cast<double>(N);
}

struct KDiagnostic
{
  Eigen::Index k = 0;
  double silhouette = std::numeric_limits<double>::quiet_NaN();
  Eigen::Index min_cluster_size = 0;
  bool feasible = false;
};

struct KSelection
{
  Eigen::Index k = 0;
  Clustering clustering;
  std::vector<KDiagnostic> diagnostics;
  Eigen::Index min_size_required = 0;
};

/// Highest-silhouette k among those whose smallest cluster holds at least
/// ceil(min_size_fraction * N) rows; ties go to the larger k.
inline KSelection select_k(
  const Eigen::MatrixXd & X, const std::vector<Eigen::Index> & k_range, double min_size_fraction, std::uint64_t seed,
  std::size_t restarts = 10)
{
  if (k_range.empty()) {
    throw std::invalid_argument("select_k: empty k range");
  }
  KSelection sel;
  sel.min_size_required =
    static_cast<Eigen::Index>(std::ceil(min_size_fraction * static_cast<double>(X.rows()) - 1e-12));
  const std::size_t distinct = detail::distinct_rows(X);
  double best = -std::numeric_limits<double>::infinity();
  for (const Eigen::Index k : k_range) {
    KDiagnostic d;
    d.k = k;
    if (k >= 2 && k <= X.rows() && static_cast<std::size_t>(k) <= distinct) {
      Clustering c = kmeans(X, k, seed, restarts);
      std::vector<Eigen::Index> size(static_cast<std::size_t>(k), 0);
      for (const int a : c.assignments) {
        ++size[static_cast<std::size_t>(a)];
      }
      d.min_cluster_size = *std::min_element(size.begin(), size.end());
      d.silhouette = silhouette(X, c.assignments);
      d.feasible = d.min_cluster_size >= sel.min_size_required;
      if (d.feasible && (d.silhouette > best || (d.silhouette == best && k > sel.k))) {
        best = d.silhouette;
        sel.k = k;
        sel.clustering = std::move(c);
      }
    }
    sel.diagnostics.push_back(d);
  }
  if (sel.k == 0) {
    std::ostringstream msg;
    msg << "select_k: no feasible k (min size " << sel.min_size_required << "):";
    for (const auto & d : sel.diagnostics) {
      msg << " k=" << d.k << " silhouette=" << d.silhouette << " min_size=" << d.min_cluster_size << ';';
    }
    throw std::runtime_error(msg.str());
  }
  return sel;
}

struct ClusterStats
{
  int label = 0;           ///< label after ordering
  int source_label = 0;    ///< label in the input assignment
  std::size_t count = 0;
  double v_a_mean = 0.0, v_a_std = 0.0;
  double dvx_mean = 0.0, dvx_std = 0.0;
  double dvy_mean = 0.0, dvy_std = 0.0;
  std::size_t type_count[4] = {0, 0, 0, 0};  ///< indexed by CrashType
  std::size_t responded = 0;
  double t_r_mean = 0.0, t_r_std = 0.0;  ///< responders only

  double pct(std::size_t n) const { return count ? 100.0 * static_cast<double>(n) / static_cast<double>(count) : 0.0; }
};

struct ClusterReport
{
  std::size_t k = 0;
  std::vector<int> assignments;  ///< relabeled
  std::vector<int> ordering;     ///< ordering[new label] = source label
  std::vector<ClusterStats> clusters;
  double silhouette = std::numeric_limits<double>::quiet_NaN();
  std::size_t min_cluster_size = 0;
  std::string text;
  std::string csv;
};

constexpr CrashType kCrashTypes[4] = {
  CrashType::Contrasting, CrashType::Chasing, CrashType::SideLeft, CrashType::SideRight};

inline std::string fmt(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Per-cluster summary (means with sample standard deviations), clusters renumbered by
/// descending mean v_a with ties broken by size.
inline ClusterReport render_report(
  const std::vector<CrashRecord> & records, const std::vector<int> & assignments,
  double silhouette_score = std::numeric_limits<double>::quiet_NaN())
{
  if (records.size() != assignments.size() || records.empty()) {
    throw std::invalid_argument("render_report: records and assignments must be non-empty and aligned");
  }
  const int k = *std::max_element(assignments.begin(), assignments.end()) + 1;
  std::vector<ClusterStats> stats(static_cast<std::size_t>(k));
  std::vector<std::vector<double>> va(k), dvx(k), dvy(k), tr(k);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto c = static_cast<std::size_t>(assignments[i]);
    const auto & r = records[i];
    auto & s = stats[c];
    ++s.count;
    va[c].push_back(r.v_a);
    dvx[c].push_back(r.dvx);
    dvy[c].push_back(r.dvy);
    if (r.crash_type) {
      ++s.type_count[static_cast<int>(*r.crash_type)];
    }
    if (r.responded) {
      ++s.responded;
      if (r.t_r) {
        tr[c].push_back(*r.t_r);
      }
    }
  }
  for (std::size_t c = 0; c < stats.size(); ++c) {
    auto & s = stats[c];
    s.source_label = static_cast<int>(c);
    s.v_a_mean = detail::mean_of(va[c]);
    s.v_a_std = detail::sstd_of(va[c]);
    s.dvx_mean = detail::mean_of(dvx[c]);
    s.dvx_std = detail::sstd_of(dvx[c]);
    s.dvy_mean = detail::mean_of(dvy[c]);
    s.dvy_std = detail::sstd_of(dvy[c]);
    s.t_r_mean = detail::mean_of(tr[c]);
    s.t_r_std = detail::sstd_of(tr[c]);
  }
  stats.erase(std::remove_if(stats.begin(), stats.end(), [](const ClusterStats & s) { return s.count == 0; }), stats.end());
  std::stable_sort(stats.begin(), stats.end(), [](const ClusterStats & a, const ClusterStats & b) {
    if (a.v_a_mean != b.v_a_mean) {
      return a.v_a_mean > b.v_a_mean;
    }
    return a.count > b.count;
  });

  ClusterReport rep;
  rep.k = stats.size();
  rep.silhouette = silhouette_score;
  std::vector<int> relabel(static_cast<std::size_t>(k), -1);
  for (std::size_t j = 0; j < stats.size(); ++j) {
    stats[j].label = static_cast<int>(j);
    relabel[static_cast<std::size_t>(stats[j].source_label)] = static_cast<int>(j);
    rep.ordering.push_back(stats[j].source_label);
  }
  for (const int a : assignments) {
    rep.assignments.push_back(relabel[static_cast<std::size_t>(a)]);
  }
  rep.min_cluster_size = records.size();
  for (const auto & s : stats) {
    rep.min_cluster_size = std::min(rep.min_cluster_size, s.count);
  }
  rep.clusters = std::move(stats);

  std::ostringstream csv;
  csv << "cluster,stat,value\n";
  for (const auto & s : rep.clusters) {
    const auto row = [&](const std::string & name, double v) { csv << s.label << ',' << name << ',' << fmt(v) << '\n'; };
    row("count", static_cast<double>(s.count));
    row("v_a_mean", s.v_a_mean);
    row("v_a_std", s.v_a_std);
    row("dvx_mean", s.dvx_mean);
    row("dvx_std", s.dvx_std);
    row("dvy_mean", s.dvy_mean);
    row("dvy_std", s.dvy_std);
    for (int t = 0; t < 4; ++t) {
      const std::string name = to_string(kCrashTypes[t]);
      row(name + "_count", static_cast<double>(s.type_count[t]));
      row(name + "_pct", s.pct(s.type_count[t]));
    }
    row("response_count", static_cast<double>(s.responded));
    row("response_pct", s.pct(s.responded));
    row("no_response_count", static_cast<double>(s.count - s.responded));
    row("no_response_pct", s.pct(s.count - s.responded));
    if (s.responded > 0) {
      row("t_r_mean", s.t_r_mean);
      row("t_r_std", s.t_r_std);
    }
  }
  rep.csv = csv.str();

  std::ostringstream txt;
  char buf[128];
  const auto cell = [&](const char * f, auto... v) {
    std::snprintf(buf, sizeof buf, f, v...);
    return std::string(buf);
  };
  txt << cell("%-22s", "Cluster");
  for (const auto & s : rep.clusters) {
    txt << cell("%-16d", s.label);
  }
  txt << '\n' << cell("%-22s", "Count");
  for (const auto & s : rep.clusters) {
    txt << cell("%-16zu", s.count);
  }
  const auto ms_row = [&](const char * name, double ClusterStats::*m, double ClusterStats::*sd) {
    txt << '\n' << cell("%-22s", name);
    for (const auto & s : rep.clusters) {
      txt << cell("%-16s", cell("%.1f (%.1f)", s.*m, s.*sd).c_str());
    }
  };
  ms_row("v_a [m/s]", &ClusterStats::v_a_mean, &ClusterStats::v_a_std);
  ms_row("dvx [m/s]", &ClusterStats::dvx_mean, &ClusterStats::dvx_std);
  ms_row("dvy [m/s]", &ClusterStats::dvy_mean, &ClusterStats::dvy_std);
  for (int t = 0; t < 4; ++t) {
    txt << '\n' << cell("%-22s", to_string(kCrashTypes[t]));
    for (const auto & s : rep.clusters) {
      txt << cell("%-16s", cell("%zu [%.0f%%]", s.type_count[t], s.pct(s.type_count[t])).c_str());
    }
  }
  txt << '\n' << cell("%-22s", "Response");
  for (const auto & s : rep.clusters) {
    txt << cell("%-16s", cell("%zu [%.0f%%]", s.responded, s.pct(s.responded)).c_str());
  }
  txt << '\n' << cell("%-22s", "No response");
  for (const auto & s : rep.clusters) {
    txt << cell("%-16s", cell("%zu [%.0f%%]", s.count - s.responded, s.pct(s.count - s.responded)).c_str());
  }
  txt << '\n' << cell("%-22s", "t_r [s]");
  for (const auto & s : rep.clusters) {
    txt << cell("%-16s", s.responded ? cell("%.1f (%.1f)", s.t_r_mean, s.t_r_std).c_str() : "-");
  }
  txt << '\n';
  if (!std::isnan(rep.silhouette)) {
    txt << "silhouette " << cell("%.4f", rep.silhouette) << ", smallest cluster " << rep.min_cluster_size << '\n';
  }
  rep.text = txt.str();
  return rep;
}

inline std::string diagnostics_csv(const std::vector<KDiagnostic> & diag)
{
  std::ostringstream o;
  o << "k,silhouette,min_cluster_size\n";
  for (const auto & d : diag) {
    o << d.k << ',' << (std::isnan(d.silhouette) ? std::string() : fmt(d.silhouette)) << ',' << d.min_cluster_size
      << '\n';
  }
  return o.str();
}

}  // namespace crashgen::cluster

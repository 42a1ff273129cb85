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
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crashgen/adversary/space.hpp"
#include "crashgen/realism/realism.hpp"
#include "crashgen/scene/scenario.hpp"

namespace crashgen::adversary
{

struct AttackConfig
{
  double eta = 1e-3;  ///< step size
  std::size_t max_iterations = 300;
  double tau = 1.0;  ///< softmin temperature, m
  bool all_neighbors = false;
  bool backtracking = false;
  double armijo = 1e-4;
  std::size_t max_backtracks = 30;
  double plateau_tolerance = 1e-6;
  std::size_t plateau_window = 20;
};

inline void validate(const AttackConfig & c)
{
  if (!(c.eta > 0.0) || !(c.tau > 0.0)) {
    throw std::invalid_argument("AttackConfig: eta and tau must be positive");
  }
}

/// Softmin over time of center distances, -tau log sum_t exp(-d_t / tau). Optionally
/// writes the gradient with respect to the first trajectory's positions.
inline double collision_loss(
  const Trajectory & adv, const Trajectory & target, double tau, Eigen::MatrixX2d * d_adv = nullptr)
{
  if (adv.steps() != target.steps()) {
    throw std::invalid_argument(
      "collision_loss: trajectories have " + std::to_string(adv.steps()) + " and " +
      std::to_string(target.steps()) + " steps");
  }
  const Eigen::Index T = adv.positions.rows();
  const Eigen::MatrixX2d diff = adv.positions - target.positions;
  const Eigen::VectorXd d = diff.rowwise().norm();
  const double m = d.minCoeff();
  const Eigen::VectorXd e = (-(d.array() - m) / tau).exp().matrix();
  const double sum = e.sum();
  if (d_adv) {
    d_adv->resize(T, 2);
    for (Eigen::Index t = 0; t < T; ++t) {
      const double w = e(t) / sum;
      d_adv->row(t) = d(t) > 0.0 ? Eigen::RowVector2d(w * diff.row(t) / d(t)) : Eigen::RowVector2d::Zero();
    }
  }
  return m - tau * std::log(sum);
}

struct AttackResult
{
  Eigen::VectorXd params;
  std::vector<double> loss_trace;
  std::vector<double> radius_excess_trace;  ///< max(0, |dp| - r) per recorded iterate
  std::vector<double> subspace_trace;       ///< |P^T dp|_inf per recorded iterate
  bool collided = false;
  std::optional<std::size_t> impact_t;
  Trajectory adversary;
  std::size_t target_index = 0;
  std::size_t iterations = 0;
  std::string stop_reason;

  double final_loss() const { return loss_trace.empty() ? 0.0 : loss_trace.back(); }
  double max_violation() const
  {
    double v = 0.0;
    for (const double x : radius_excess_trace) {
      v = std::max(v, x);
    }
    for (const double x : subspace_trace) {
      v = std::max(v, x);
    }
    return v;
  }
};

class AttackError : public std::runtime_error
{
public:
  AttackError(const std::string & what, Eigen::VectorXd iterate)
  : std::runtime_error(what), iterate_(std::move(iterate))
  {
  }
  const Eigen::VectorXd & iterate() const { return iterate_; }

private:
  Eigen::VectorXd iterate_;
};

namespace detail
{

template <class Space>
AttackResult attack_target(
  const Space & space, const realism::RealismConstraint & c, const Scenario & s, std::size_t target,
  const AttackConfig & cfg)
{
  if (c.theta_star.size() != space.dim()) {
    throw std::invalid_argument("attack: constraint and parameter space have different dimensions");
  }
  const Trajectory & tgt = s.refs.at(target);
  const Dims & tgt_dims = s.ref_dims(target);
  const Dims & adv_dims = s.adversary_dims();

  AttackResult res;
  res.target_index = target;
  Eigen::VectorXd p = space.origin();
  model::PredictionTape tape;
  Eigen::MatrixX2d d_pos;
  std::size_t flat = 0;

  const auto evaluate = [&](const Eigen::VectorXd & x, Trajectory & traj, Eigen::MatrixX2d * grad_pos) {
    traj = space.predict(x, s, grad_pos ? &tape : nullptr);
    return collision_loss(traj, tgt, cfg.tau, grad_pos);
  };
  const auto record = [&](const Eigen::VectorXd & x, double f) {
    const auto v = realism::violation(c, x);
    res.loss_trace.push_back(f);
    res.radius_excess_trace.push_back(v.radius_excess);
    res.subspace_trace.push_back(v.subspace);
  };

  Trajectory traj;
  double f = evaluate(p, traj, &d_pos);
  record(p, f);
  for (;;) {
    if (const auto hit = first_overlap(traj, adv_dims, tgt, tgt_dims)) {
      res.collided = true;
      res.impact_t = hit;
      res.stop_reason = "collision";
      break;
    }
    if (res.iterations >= cfg.max_iterations) {
      res.stop_reason = "max_iterations";
      break;
    }
    const Eigen::VectorXd g = space.pullback(p, tape, d_pos);
    if (!g.allFinite()) {
      throw AttackError(
        "attack on '" + s.id() + "': non-finite gradient at iteration " + std::to_string(res.iterations), p);
    }
    double eta = cfg.eta;
    Eigen::VectorXd p_new = realism::project(c, p - eta * g);
    Trajectory traj_new;
    double f_new = evaluate(p_new, traj_new, nullptr);
    if (cfg.backtracking) {
      for (std::size_t b = 0; b < cfg.max_backtracks && !(f_new <= f + cfg.armijo * g.dot(p_new - p)); ++b) {
        eta *= 0.5;
        p_new = realism::project(c, p - eta * g);
        f_new = evaluate(p_new, traj_new, nullptr);
      }
    }
    ++res.iterations;
    p = std::move(p_new);
    f_new = evaluate(p, traj, &d_pos);
    flat = std::abs(f_new - f) < cfg.plateau_tolerance ? flat + 1 : 0;
    f = f_new;
    record(p, f);
    if (flat >= cfg.plateau_window) {
      if (const auto hit = first_overlap(traj, adv_dims, tgt, tgt_dims)) {
        res.collided = true;
        res.impact_t = hit;
        res.stop_reason = "collision";
      } else {
        res.stop_reason = "plateau";
      }
      break;
    }
  }
  res.params = std::move(p);
  res.adversary = std::move(traj);
  return res;
}

}  // namespace detail

/// Projected gradient descent on the softmin separation from the trained point, inside
/// the realism set. Stops on footprint overlap with the target reference, on a loss
/// plateau, or at the iteration limit.
template <class Space>
AttackResult attack(
  const Space & space, const realism::RealismConstraint & c, const Scenario & s, const AttackConfig & cfg)
{
  validate(cfg);
  AttackResult first = detail::attack_target(space, c, s, s.target_index, cfg);
  if (first.collided || !cfg.all_neighbors) {
    return first;
  }
  for (std::size_t i = 0; i < s.refs.size(); ++i) {
    if (i == s.target_index) {
      continue;
    }
    AttackResult r = detail::attack_target(space, c, s, i, cfg);
    if (r.collided) {
      return r;
    }
  }
  return first;
}

/// |v_adv - v_target| over the step leading into the impact.
inline double impact_relative_speed(const Scenario & s, const AttackResult & r)
{
  if (!r.impact_t) {
    return 0.0;
  }
  const std::size_t t = *r.impact_t == 0 ? 0 : *r.impact_t - 1;
  return (step_velocity(r.adversary, t) - step_velocity(s.refs.at(r.target_index), t)).norm();
}

struct CalibrationConfig
{
  double r_max = 1.0;
  std::size_t bisection_steps = 12;
  double success_fraction = 0.9;
  double severity_cap = 20.0;  ///< m/s, median impact relative speed
};

struct CalibrationProbe
{
  double r = 0.0;
  double collision_fraction = 0.0;
  double median_impact_speed = 0.0;
  bool success = false;
  std::vector<bool> collided;
};

struct CalibrationResult
{
  double r = 0.0;
  std::vector<CalibrationProbe> sweep;
};

class CalibrationError : public std::runtime_error
{
public:
  CalibrationError(const std::string & what, std::vector<CalibrationProbe> sweep)
  : std::runtime_error(what), sweep_(std::move(sweep))
  {
  }
  const std::vector<CalibrationProbe> & sweep() const { return sweep_; }

private:
  std::vector<CalibrationProbe> sweep_;
};

template <class Space>
CalibrationProbe probe_radius(
  const Space & space, realism::RealismConstraint c, const std::vector<Scenario> & set, const AttackConfig & cfg,
  const CalibrationConfig & cal, double r)
{
  c.r = r;
  CalibrationProbe pr;
  pr.r = r;
  std::vector<double> speeds;
  for (const auto & s : set) {
    const AttackResult res = attack(space, c, s, cfg);
    pr.collided.push_back(res.collided);
    if (res.collided) {
      speeds.push_back(impact_relative_speed(s, res));
    }
  }
  pr.collision_fraction = set.empty() ? 0.0 : static_cast<double>(speeds.size()) / static_cast<double>(set.size());
  if (!speeds.empty()) {
    std::sort(speeds.begin(), speeds.end());
    const std::size_t m = speeds.size();
    pr.median_impact_speed = m % 2 ? speeds[m / 2] : 0.5 * (speeds[m / 2 - 1] + speeds[m / 2]);
  }
  pr.success = pr.collision_fraction >= cal.success_fraction && pr.median_impact_speed <= cal.severity_cap;
  return pr;
}

/// True when the MAP prediction of every scenario stays clear of its target.
template <class Space>
bool collision_free_at_origin(const Space & space, const std::vector<Scenario> & set)
{
  for (const auto & s : set) {
    const Trajectory t = space.predict(space.origin(), s);
    if (first_overlap(t, s.adversary_dims(), s.target_ref(), s.target_dims())) {
      return false;
    }
  }
  return true;
}

/// Bisection for the smallest radius whose attacks collide on enough of the calibration
/// set without exceeding the severity cap.
template <class Space>
CalibrationResult calibrate_r(
  const Space & space, const realism::RealismConstraint & base, const std::vector<Scenario> & set,
  const AttackConfig & cfg, const CalibrationConfig & cal = {})
{
  if (set.empty()) {
    throw std::invalid_argument("calibrate_r: empty calibration set");
  }
  if (!collision_free_at_origin(space, set)) {
    throw std::invalid_argument("calibrate_r: calibration set must be collision-free at r = 0");
  }
  CalibrationResult out;
  auto top = probe_radius(space, base, set, cfg, cal, cal.r_max);
  out.sweep.push_back(top);
  if (!top.success) {
    throw CalibrationError(
      "calibrate_r: no successful radius in [0, " + std::to_string(cal.r_max) + "] (collision fraction " +
        std::to_string(top.collision_fraction) + ", median impact speed " + std::to_string(top.median_impact_speed) +
        " m/s at r_max)",
      out.sweep);
  }
  double lo = 0.0;
  double hi = cal.r_max;
  for (std::size_t i = 0; i < cal.bisection_steps; ++i) {
    const double mid = 0.5 * (lo + hi);
    auto pr = probe_radius(space, base, set, cfg, cal, mid);
    out.sweep.push_back(pr);
    (pr.success ? hi : lo) = mid;
  }
  out.r = hi;
  return out;
}

struct CampaignEntry
{
  std::string scenario_id;
  std::optional<AttackResult> result;
  std::string error;
};

template <class Space>
std::vector<CampaignEntry> run_campaign(
  const Space & space, const realism::RealismConstraint & c, const std::vector<Scenario> & scenarios,
  const AttackConfig & cfg)
{
  std::vector<CampaignEntry> out;
  out.reserve(scenarios.size());
  for (const auto & s : scenarios) {
    CampaignEntry e;
    e.scenario_id = s.id();
    try {
      e.result = attack(space, c, s, cfg);
    } catch (const std::exception & ex) {
      e.error = ex.what();
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace crashgen::adversary

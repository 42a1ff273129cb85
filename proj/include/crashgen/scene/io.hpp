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

#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "crashgen/scene/crash.hpp"
#include "crashgen/scene/scenario.hpp"

namespace crashgen::io
{

using nlohmann::json;

inline json to_json(const Vec2 & p) { return json::array({p.x(), p.y()}); }

inline Vec2 vec2_from_json(const json & j)
{
  if (!j.is_array() || j.size() != 2) {
    throw std::invalid_argument("expected a 2-element array, got " + j.dump());
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

inline json to_json(const Polyline & p)
{
  json a = json::array();
  for (const auto & v : p) {
    a.push_back(to_json(v));
  }
  return a;
}

inline Polyline polyline_from_json(const json & j)
{
  Polyline p;
  for (const auto & v : j) {
    p.push_back(vec2_from_json(v));
  }
  return p;
}

inline json to_json(const Trajectory & t)
{
  json a = json::array();
  for (std::size_t i = 0; i < t.steps(); ++i) {
    a.push_back(to_json(t.at(i)));
  }
  return a;
}

inline Trajectory trajectory_from_json(const json & j, double dt)
{
  Trajectory t;
  t.dt = dt;
  t.positions.resize(static_cast<Eigen::Index>(j.size()), 2);
  for (std::size_t i = 0; i < j.size(); ++i) {
    t.positions.row(static_cast<Eigen::Index>(i)) = vec2_from_json(j[i]).transpose();
  }
  return t;
}

inline json to_json(const Scenario & s)
{
  json lanes = json::array();
  for (const auto & l : s.scene.lanes) {
    lanes.push_back(to_json(l));
  }
  json scene{{"scene_id", s.scene.scene_id}, {"lanes", lanes}};
  if (!s.scene.drivable_area.empty()) {
    json area = json::array();
    for (const auto & poly : s.scene.drivable_area) {
      area.push_back(to_json(poly));
    }
    scene["drivable_area"] = area;
  }
  json refs = json::array();
  for (const auto & r : s.refs) {
    refs.push_back(to_json(r));
  }
  json dims = json::array();
  for (const auto & d : s.dims) {
    dims.push_back(json::array({d.length, d.width}));
  }
  return json{
    {"scene", scene},
    {"dt", s.dt()},
    {"refs", refs},
    {"adv_init", {{"pos", to_json(s.adv_init.position)}, {"vel", to_json(s.adv_init.velocity)}}},
    {"adv_ref", to_json(s.adv_ref)},
    {"target_index", s.target_index},
    {"dims", dims}};
}

inline Scenario scenario_from_json(const json & j)
{
  Scenario s;
  try {
    const json & scene = j.at("scene");
    s.scene.scene_id = scene.value("scene_id", std::string{});
    for (const auto & l : scene.at("lanes")) {
      s.scene.lanes.push_back(polyline_from_json(l));
    }
    if (scene.contains("drivable_area")) {
      for (const auto & poly : scene.at("drivable_area")) {
        s.scene.drivable_area.push_back(polyline_from_json(poly));
      }
    }
    const double dt = j.at("dt").get<double>();
    for (const auto & r : j.at("refs")) {
      s.refs.push_back(trajectory_from_json(r, dt));
    }
    s.adv_init.position = vec2_from_json(j.at("adv_init").at("pos"));
    s.adv_init.velocity = vec2_from_json(j.at("adv_init").at("vel"));
    s.adv_ref = trajectory_from_json(j.at("adv_ref"), dt);
    s.target_index = j.at("target_index").get<std::size_t>();
    for (const auto & d : j.at("dims")) {
      s.dims.push_back(Dims{d.at(0).get<double>(), d.at(1).get<double>()});
    }
  } catch (const json::exception & e) {
    throw std::invalid_argument(std::string("malformed scenario JSON: ") + e.what());
  }
  validate(s);
  return s;
}

inline void write_scenario(const std::string & path, const Scenario & s)
{
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot open '" + path + "' for writing");
  }
  out << to_json(s).dump(1) << '\n';
  if (!out) {
    throw std::runtime_error("failed writing '" + path + "'");
  }
}

inline Scenario read_scenario(const std::string & path)
{
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open '" + path + "'");
  }
  try {
    return scenario_from_json(json::parse(in));
  } catch (const std::exception & e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

// CrashRecord CSV. Missing values are empty fields; doubles use round-trip precision.

inline const char * crash_csv_header()
{
  return "scenario_id,collided,impact_t,v_a,dvx,dvy,gamma,crash_type,responded,t_r";
}

inline std::string format_double(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string to_csv_row(const CrashRecord & r)
{
  std::ostringstream o;
  o << r.scenario_id << ',' << (r.collided ? "true" : "false") << ',';
  if (r.impact_t) {
    o << *r.impact_t;
  }
  o << ',';
  if (r.collided) {
    o << format_double(r.v_a) << ',' << format_double(r.dvx) << ',' << format_double(r.dvy) << ','
      << format_double(r.gamma);
  } else {
    o << ",,,";
  }
  o << ',' << (r.crash_type ? to_string(*r.crash_type) : "") << ',' << (r.responded ? "true" : "false") << ',';
  if (r.t_r) {
    o << format_double(*r.t_r);
  }
  return o.str();
}

inline void write_crash_csv(std::ostream & out, const std::vector<CrashRecord> & records)
{
  out << crash_csv_header() << '\n';
  for (const auto & r : records) {
    out << to_csv_row(r) << '\n';
  }
}

namespace detail
{

inline std::vector<std::string> split_csv(const std::string & line)
{
  std::vector<std::string> out;
  std::string cur;
  for (const char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string & s, const char * field)
{
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos == s.size()) {
      return v;
    }
  } catch (const std::exception &) {
  }
  throw std::invalid_argument(std::string("bad value for ") + field + ": '" + s + "'");
}

inline bool parse_bool(const std::string & s, const char * field)
{
  if (s == "true" || s == "1") {
    return true;
  }
  if (s == "false" || s == "0") {
    return false;
  }
  throw std::invalid_argument(std::string("bad boolean for ") + field + ": '" + s + "'");
}

}  // namespace detail

inline CrashRecord crash_record_from_csv(const std::string & line)
{
  const auto f = detail::split_csv(line);
  if (f.size() != 10) {
    throw std::invalid_argument("crash CSV row must have 10 fields: '" + line + "'");
  }
  CrashRecord r;
  r.scenario_id = f[0];
  r.collided = detail::parse_bool(f[1], "collided");
  if (!f[2].empty()) {
    r.impact_t = static_cast<std::size_t>(detail::parse_double(f[2], "impact_t"));
  }
  if (r.collided) {
    r.v_a = detail::parse_double(f[3], "v_a");
    r.dvx = detail::parse_double(f[4], "dvx");
    r.dvy = detail::parse_double(f[5], "dvy");
    r.gamma = detail::parse_double(f[6], "gamma");
  }
  if (!f[7].empty()) {
    r.crash_type = crash_type_from_string(f[7]);
  }
  r.responded = detail::parse_bool(f[8], "responded");
  if (!f[9].empty()) {
    r.t_r = detail::parse_double(f[9], "t_r");
  }
  return r;
}

inline std::vector<CrashRecord> read_crash_csv(std::istream & in)
{
  std::string line;
  if (!std::getline(in, line) || detail::split_csv(line) != detail::split_csv(crash_csv_header())) {
    throw std::invalid_argument("crash CSV: missing or unexpected header");
  }
  std::vector<CrashRecord> out;
  while (std::getline(in, line)) {
    if (!line.empty()) {
      out.push_back(crash_record_from_csv(line));
    }
  }
  return out;
}

}  // namespace crashgen::io

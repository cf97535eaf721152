#include "mtc/trace_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace mtc {

void write_trace_csv(const Trace& trace, std::ostream& out) {
  out << kTraceHeader << "\n";
  char buf[256];
  for (const auto& s : trace.snapshots) {
    for (const auto& v : s.vehicles) {
      const std::uint32_t f = v.flags | (v.is_rv ? flags::robot : 0u);
      std::snprintf(buf, sizeof buf, "%d,%.3f,%d,%d,%.10g,%.10g,%.10g,%s,%u\n", s.step, s.time,
                    v.id, v.lane, v.position, v.velocity, v.acceleration,
                    to_string(v.controller).c_str(), f);
      out << buf;
    }
  }
}

void write_trace_csv(const Trace& trace, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write trace '" + path + "'");
  write_trace_csv(trace, f);
}

std::string trace_meta_json(const Trace& trace) {
  const auto& m = trace.meta;
  nlohmann::ordered_json j;
  j["scenario"] = m.scenario;
  j["ring_length"] = m.ring_length;
  j["road_length"] = m.road_length;
  j["speed_limit"] = m.speed_limit;
  j["dt"] = m.dt;
  j["warmup_steps"] = m.warmup_steps;
  j["horizon_steps"] = m.horizon_steps;
  j["record_stride"] = m.record_stride;
  j["seed"] = m.seed;
  j["perturbation_target"] = m.perturbation_target;
  j["perturbation_start"] = m.perturbation_start;
  j["insertions"] = m.insertions;
  j["exits"] = m.exits;
  auto ev = nlohmann::ordered_json::array();
  for (const auto& e : trace.events) {
    ev.push_back({{"step", e.step}, {"time", e.time}, {"vehicle_id", e.vehicle_id},
                  {"kind", e.kind}, {"value", e.value}});
  }
  j["events"] = std::move(ev);
  return j.dump(1);
}

void write_trace_meta(const Trace& trace, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write trace metadata '" + path + "'");
  f << trace_meta_json(trace) << "\n";
}

std::string meta_path_for(const std::string& csv_path) {
  const std::string ext = ".csv";
  if (csv_path.size() > ext.size() &&
      csv_path.compare(csv_path.size() - ext.size(), ext.size(), ext) == 0) {
    return csv_path.substr(0, csv_path.size() - ext.size()) + ".meta.json";
  }
  return csv_path + ".meta.json";
}

void rebuild_ring_geometry(Snapshot& snap, double L) {
  auto& vs = snap.vehicles;
  const std::size_t n = vs.size();
  if (n == 0) return;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (vs[a].position != vs[b].position) return vs[a].position < vs[b].position;
    return vs[a].id < vs[b].id;
  });
  for (std::size_t k = 0; k < n; ++k) {
    auto& v = vs[order[k]];
    const auto& l = vs[order[(k + 1) % n]];
    v.leader_id = l.id;
    if (n == 1) {
      v.gap = L - v.length;
    } else {
      double d = std::fmod(l.position - v.position, L);
      if (d < 0) d += L;
      v.gap = d - l.length;
    }
  }
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(s);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

Trace read_trace(const std::string& csv_path) {
  Trace tr;
  {
    std::ifstream mf(meta_path_for(csv_path));
    if (!mf) throw IoError("missing trace metadata '" + meta_path_for(csv_path) + "'");
    nlohmann::json j;
    try {
      mf >> j;
      auto& m = tr.meta;
      m.scenario = j.at("scenario").get<std::string>();
      m.ring_length = j.at("ring_length").get<double>();
      m.road_length = j.at("road_length").get<double>();
      m.speed_limit = j.at("speed_limit").get<double>();
      m.dt = j.at("dt").get<double>();
      m.warmup_steps = j.at("warmup_steps").get<int>();
      m.horizon_steps = j.at("horizon_steps").get<int>();
      m.record_stride = j.at("record_stride").get<int>();
      m.seed = j.at("seed").get<std::uint64_t>();
      m.perturbation_target = j.at("perturbation_target").get<int>();
      m.perturbation_start = j.at("perturbation_start").get<double>();
      m.insertions = j.at("insertions").get<long>();
      m.exits = j.at("exits").get<long>();
      for (const auto& e : j.at("events")) {
        tr.events.push_back({e.at("step").get<int>(), e.at("time").get<double>(),
                             e.at("vehicle_id").get<int>(), e.at("kind").get<std::string>(),
                             e.at("value").get<double>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw IoError(meta_path_for(csv_path) + ": " + e.what());
    }
  }
  std::ifstream f(csv_path);
  if (!f) throw IoError("cannot open trace '" + csv_path + "'");
  std::string line;
  if (!std::getline(f, line) || line != kTraceHeader) {
    throw IoError(csv_path + ": unexpected header");
  }
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = split(line, ',');
    if (c.size() != 9) {
      throw IoError(csv_path + ":" + std::to_string(lineno) + ": expected 9 columns");
    }
    try {
      const int step = std::stoi(c[0]);
      if (tr.snapshots.empty() || tr.snapshots.back().step != step) {
        if (!tr.snapshots.empty() && step < tr.snapshots.back().step) {
          throw IoError(csv_path + ":" + std::to_string(lineno) + ": steps out of order");
        }
        tr.snapshots.push_back({step, step * tr.meta.dt, {}});
      }
      VehicleState v;
      v.id = std::stoi(c[2]);
      v.lane = std::stoi(c[3]);
      v.position = std::stod(c[4]);
      v.velocity = std::stod(c[5]);
      v.acceleration = std::stod(c[6]);
      v.controller = parse_controller_kind(c[7]);
      const auto fl = static_cast<std::uint32_t>(std::stoul(c[8]));
      v.is_rv = (fl & flags::robot) != 0;
      v.flags = fl & ~flags::robot;
      tr.snapshots.back().vehicles.push_back(v);
    } catch (const std::invalid_argument&) {
      throw IoError(csv_path + ":" + std::to_string(lineno) + ": malformed number");
    } catch (const ConfigError& e) {
      throw IoError(csv_path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (tr.meta.scenario == "ring") {
    for (auto& s : tr.snapshots) rebuild_ring_geometry(s, tr.meta.ring_length);
  }
  return tr;
}

}  // namespace mtc

#include "mtc/experiment.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "mtc/csc.hpp"
#include "mtc/rl_env.hpp"
#include "mtc/trace_io.hpp"

namespace fs = std::filesystem;

namespace mtc {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

template <class T, std::size_t N>
void read(const json& j, const char* key, std::array<T, N>& out) {
  if (!j.contains(key)) return;
  const auto v = j.at(key).get<std::vector<T>>();
  if (v.size() != N) throw ConfigError(std::string(key) + ": expected " + std::to_string(N) + " values");
  std::copy(v.begin(), v.end(), out.begin());
}

const json& section(const json& j, const char* key) {
  static const json empty = json::object();
  return j.contains(key) && j.at(key).is_object() ? j.at(key) : empty;
}

void parse_params(const json& j, ControllerSet& p) {
  const auto& idm = section(j, "idm");
  read(idm, "a_max", p.idm.a_max);
  read(idm, "v0", p.idm.v0);
  read(idm, "delta", p.idm.delta);
  read(idm, "s0", p.idm.s0);
  read(idm, "T", p.idm.T);
  read(idm, "b", p.idm.b);
  read(idm, "noise_sigma", p.idm.noise_sigma);
  const auto& bcm = section(j, "bcm");
  read(bcm, "k_d", p.bcm.k_d);
  read(bcm, "k_v", p.bcm.k_v);
  read(bcm, "k_c", p.bcm.k_c);
  read(bcm, "v_des", p.bcm.v_des);
  const auto& lacc = section(j, "lacc");
  read(lacc, "k1", p.lacc.k1);
  read(lacc, "k2", p.lacc.k2);
  read(lacc, "h", p.lacc.h);
  read(lacc, "tau", p.lacc.tau);
  const auto& fsj = section(j, "fs");
  read(fsj, "dx0", p.fs.dx0);
  read(fsj, "d", p.fs.d);
  read(fsj, "U", p.fs.U);
  read(fsj, "u_scale", p.fs.u_scale);
  const auto& pw = section(j, "piws");
  read(pw, "v_catch", p.piws.v_catch);
  read(pw, "g_l", p.piws.g_l);
  read(pw, "g_u", p.piws.g_u);
  read(pw, "gamma", p.piws.gamma);
  read(pw, "window_s", p.piws.window_s);
  const auto& sg = section(j, "scripted_gap");
  read(sg, "target_gap", p.scripted_gap.target_gap);
  read(sg, "tracking_margin", p.scripted_gap.tracking_margin);
  read(sg, "k_gap", p.scripted_gap.k_gap);
  read(sg, "k_speed", p.scripted_gap.k_speed);
  const auto& f = section(j, "failsafe");
  read(f, "b_max", p.failsafe.b_max);
  read(f, "min_gap", p.failsafe.min_gap);
}

ojson params_to_json(const ControllerSet& p) {
  ojson j;
  j["idm"] = {{"a_max", p.idm.a_max}, {"v0", p.idm.v0}, {"delta", p.idm.delta}, {"s0", p.idm.s0},
              {"T", p.idm.T}, {"b", p.idm.b}, {"noise_sigma", p.idm.noise_sigma}};
  j["bcm"] = {{"k_d", p.bcm.k_d}, {"k_v", p.bcm.k_v}, {"k_c", p.bcm.k_c}, {"v_des", p.bcm.v_des}};
  j["lacc"] = {{"k1", p.lacc.k1}, {"k2", p.lacc.k2}, {"h", p.lacc.h}, {"tau", p.lacc.tau}};
  j["fs"] = {{"dx0", p.fs.dx0}, {"d", p.fs.d}, {"U", p.fs.U}, {"u_scale", p.fs.u_scale}};
  j["piws"] = {{"v_catch", p.piws.v_catch}, {"g_l", p.piws.g_l}, {"g_u", p.piws.g_u},
               {"gamma", p.piws.gamma}, {"window_s", p.piws.window_s}};
  j["scripted_gap"] = {{"target_gap", p.scripted_gap.target_gap},
                       {"tracking_margin", p.scripted_gap.tracking_margin},
                       {"k_gap", p.scripted_gap.k_gap}, {"k_speed", p.scripted_gap.k_speed}};
  j["failsafe"] = {{"b_max", p.failsafe.b_max}, {"min_gap", p.failsafe.min_gap}};
  return j;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot write '" + p.string() + "'");
  f << text;
  if (text.empty() || text.back() != '\n') f << "\n";
}

std::string seed_tag(std::uint64_t s) { return std::to_string(s); }

double mean_or(double sum, int n, double fallback = 0.0) {
  return n > 0 ? sum / n : fallback;
}

std::string num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char b[32];
  std::snprintf(b, sizeof b, "%.10g", x);
  return b;
}

json jnum(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

}  // namespace

int ExperimentConfig::resolved_rv_count() const {
  if (!is_ring()) return 0;
  if (rv_count) return *rv_count;
  return rv_count_for_penetration(penetration, std::get<RingScenario>(scenario).n_vehicles);
}

void ExperimentConfig::validate() const {
  if (!(penetration >= 0 && penetration <= 1)) throw ConfigError("fleet.penetration must be in [0, 1]");
  if (seeds.empty()) throw ConfigError("seeds: at least one seed required");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  std::visit([](const auto& s) { s.validate(); }, scenario);
  schedule.validate();
  if (is_ring()) {
    const int n = std::get<RingScenario>(scenario).n_vehicles;
    const int k = resolved_rv_count();
    if (k < 0 || k > n) throw ConfigError("fleet.rv_count must be in [0, n_vehicles]");
  }
  params.idm.validate();
  params.bcm.validate();
  params.lacc.validate();
  params.fs.validate();
  params.piws.validate();
  params.scripted_gap.validate();
  if (controller == ControllerKind::external) {
    throw ConfigError("fleet.controller: 'external' is only available to the RL environment");
  }
  if (controller == ControllerKind::policy) {
    if (policy_path.empty()) throw ConfigError("fleet.policy: required for the policy controller");
    if (!fs::exists(policy_path)) throw ConfigError("fleet.policy: no such file '" + policy_path + "'");
  }
  if (!csc_path.empty() && !fs::exists(csc_path)) {
    throw ConfigError("fleet.csc_model: no such file '" + csc_path + "'");
  }
  if (!humanizer_histogram.empty() && !fs::exists(humanizer_histogram)) {
    throw ConfigError("humanizer_histogram: no such file '" + humanizer_histogram + "'");
  }
}

ExperimentConfig parse_experiment_config(const json& j) {
  ExperimentConfig c;
  try {
    read(j, "name", c.name);
    const std::string scen = j.value("scenario", std::string("ring"));
    if (scen == "ring") {
      const auto& r = section(j, "ring");
      double density = 85.0;
      int n = 22;
      read(r, "density_veh_km", density);
      read(r, "n_vehicles", n);
      auto rs = RingScenario::from_density(density, n);
      if (r.contains("ring_length")) rs.ring_length = r.at("ring_length").get<double>();
      read(r, "speed_limit", rs.speed_limit);
      read(r, "vehicle_length", rs.vehicle_length);
      read(r, "initial_velocity", rs.initial_velocity);
      c.scenario = rs;
    } else if (scen == "bottleneck") {
      const auto& b = section(j, "bottleneck");
      BottleneckScenario bs;
      if (b.contains("segments")) {
        bs.segments.clear();
        for (const auto& s : b.at("segments")) {
          bs.segments.push_back({s.at("length").get<double>(), s.at("lanes").get<int>()});
        }
      }
      read(b, "inflow_rate", bs.inflow_rate);
      read(b, "speed_limit", bs.speed_limit);
      read(b, "vehicle_length", bs.vehicle_length);
      read(b, "merge_zone", bs.merge_zone);
      read(b, "insertion_speed", bs.insertion_speed);
      read(b, "insertion_min_gap", bs.insertion_min_gap);
      c.scenario = bs;
    } else {
      throw ConfigError("scenario: expected 'ring' or 'bottleneck', got '" + scen + "'");
    }

    const auto& f = section(j, "fleet");
    if (f.contains("controller")) c.controller = parse_controller_kind(f.at("controller").get<std::string>());
    if (f.contains("rv_count") && !f.at("rv_count").is_null()) c.rv_count = f.at("rv_count").get<int>();
    read(f, "penetration", c.penetration);
    if (f.contains("placement")) {
      const auto p = f.at("placement").get<std::string>();
      if (p == "platooned") c.placement = Placement::platooned;
      else if (p == "dispersed") c.placement = Placement::dispersed;
      else throw ConfigError("fleet.placement: expected 'platooned' or 'dispersed'");
    }
    read(f, "policy", c.policy_path);
    read(f, "csc_model", c.csc_path);

    parse_params(section(j, "controllers"), c.params);

    const auto& s = section(j, "schedule");
    read(s, "dt", c.schedule.dt);
    read(s, "horizon_steps", c.schedule.horizon_steps);
    read(s, "warmup_steps", c.schedule.warmup_steps);
    read(s, "measurement_window_s", c.schedule.measurement_window_s);
    read(s, "humanizer", c.schedule.humanizer_enabled);
    read(s, "humanizer_start_s", c.schedule.humanizer_start_s);
    read(s, "record_stride", c.schedule.record_stride);
    if (s.contains("perturbation") && !s.at("perturbation").is_null()) {
      const auto& p = s.at("perturbation");
      PerturbationSpec ps;
      read(p, "target_id", ps.target_id);
      read(p, "start_s", ps.start_s);
      read(p, "hold_velocity", ps.hold_velocity);
      read(p, "duration_s", ps.duration_s);
      c.schedule.perturbation = ps;
    }
    read(j, "humanizer_histogram", c.humanizer_histogram);

    const auto& m = section(j, "metrics");
    read(m, "measurement_window_s", c.metrics.measurement_window_s);
    read(m, "noise_sigma", c.metrics.noise_sigma);
    read(m, "stability_window_s", c.metrics.stability_window_s);
    read(m, "war_window_s", c.metrics.war_window_s);
    read(m, "reference_position", c.metrics.reference_position);
    if (m.contains("war_convention")) {
      const auto w = m.at("war_convention").get<std::string>();
      if (w == "dampening") c.metrics.war_convention = WarConvention::dampening;
      else if (w == "ratio_literal") c.metrics.war_convention = WarConvention::ratio_literal;
      else throw ConfigError("metrics.war_convention: expected 'dampening' or 'ratio_literal'");
    }
    c.metrics.measurement_window_s = c.schedule.measurement_window_s;
    if (m.contains("measurement_window_s")) {
      c.metrics.measurement_window_s = m.at("measurement_window_s").get<double>();
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    read(j, "out_dir", c.out_dir);
    read(j, "write_traces", c.write_traces);
    read(j, "workers", c.workers);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config '" + path + "'");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw IoError("config '" + path + "': " + e.what());
  }
  return parse_experiment_config(j);
}

ojson experiment_config_to_json(const ExperimentConfig& c) {
  ojson j;
  j["name"] = c.name;
  if (c.is_ring()) {
    const auto& r = std::get<RingScenario>(c.scenario);
    j["scenario"] = "ring";
    j["ring"] = {{"density_veh_km", r.density_veh_per_km()}, {"n_vehicles", r.n_vehicles},
                 {"ring_length", r.ring_length}, {"speed_limit", r.speed_limit},
                 {"vehicle_length", r.vehicle_length},
                 {"initial_velocity", r.initial_velocity}};
  } else {
    const auto& b = std::get<BottleneckScenario>(c.scenario);
    j["scenario"] = "bottleneck";
    auto segs = ojson::array();
    for (const auto& s : b.segments) segs.push_back({{"length", s.length}, {"lanes", s.lanes}});
    j["bottleneck"] = {{"segments", segs}, {"inflow_rate", b.inflow_rate},
                       {"speed_limit", b.speed_limit}, {"vehicle_length", b.vehicle_length},
                       {"merge_zone", b.merge_zone}, {"insertion_speed", b.insertion_speed},
                       {"insertion_min_gap", b.insertion_min_gap}};
  }
  ojson f;
  f["controller"] = to_string(c.controller);
  f["rv_count"] = c.resolved_rv_count();
  f["penetration"] = c.penetration;
  f["placement"] = c.placement == Placement::platooned ? "platooned" : "dispersed";
  if (!c.policy_path.empty()) f["policy"] = c.policy_path;
  if (!c.csc_path.empty()) f["csc_model"] = c.csc_path;
  j["fleet"] = f;
  j["controllers"] = params_to_json(c.params);
  ojson s;
  s["dt"] = c.schedule.dt;
  s["horizon_steps"] = c.schedule.horizon_steps;
  s["warmup_steps"] = c.schedule.warmup_steps;
  s["measurement_window_s"] = c.schedule.measurement_window_s;
  s["humanizer"] = c.schedule.humanizer_enabled;
  s["humanizer_start_s"] = c.schedule.humanizer_start_s;
  s["record_stride"] = c.schedule.record_stride;
  if (c.schedule.perturbation) {
    const auto& p = *c.schedule.perturbation;
    s["perturbation"] = {{"target_id", p.target_id}, {"start_s", p.start_s},
                         {"hold_velocity", p.hold_velocity}, {"duration_s", p.duration_s}};
  } else {
    s["perturbation"] = nullptr;
  }
  j["schedule"] = s;
  if (!c.humanizer_histogram.empty()) j["humanizer_histogram"] = c.humanizer_histogram;
  j["metrics"] = {{"measurement_window_s", c.metrics.measurement_window_s},
                  {"noise_sigma", c.metrics.noise_sigma},
                  {"stability_window_s", c.metrics.stability_window_s},
                  {"war_window_s", c.metrics.war_window_s},
                  {"war_convention", c.metrics.war_convention == WarConvention::dampening
                                         ? "dampening" : "ratio_literal"},
                  {"reference_position", c.metrics.reference_position}};
  j["seeds"] = c.seeds;
  j["out_dir"] = c.out_dir;
  j["write_traces"] = c.write_traces;
  j["workers"] = c.workers;
  return j;
}

FleetSpec make_fleet(const ExperimentConfig& c) {
  FleetSpec f;
  f.rv_controller = c.controller;
  f.rv_count = c.resolved_rv_count();
  f.placement = c.placement;
  f.penetration = c.penetration;
  f.params = c.params;
  if (c.controller == ControllerKind::policy) {
    auto pol = std::make_shared<const GaussianPolicy>(GaussianPolicy::load(c.policy_path));
    std::shared_ptr<const CscModel> csc;
    if (!c.csc_path.empty()) csc = std::make_shared<const CscModel>(CscModel::load(c.csc_path));
    f.factory = [pol, csc](int) { return std::make_unique<PolicyController>(pol, csc); };
  }
  return f;
}

AccelEventModel humanizer_model(const ExperimentConfig& c) {
  return c.humanizer_histogram.empty() ? default_accel_model()
                                       : load_accel_histogram(c.humanizer_histogram);
}

AggregateReport aggregate(const std::vector<MetricsReport>& rs) {
  AggregateReport a;
  a.n = static_cast<int>(rs.size());
  if (rs.empty()) return a;
  int n_stable = 0;
  double tts = 0.0;
  for (const auto& r : rs) {
    a.ttc_worst += r.ttc_worst;
    a.drac_worst += r.drac_worst;
    a.fuel_economy += r.fuel_economy;
    a.throughput += r.throughput;
    a.cav += r.cav;
    a.mean_velocity += r.mean_velocity;
    if (std::isfinite(r.war)) {
      a.war += r.war;
      ++a.war_count;
    }
    if (std::isfinite(r.war_literal)) a.war_literal += r.war_literal;
    if (r.stable) {
      ++n_stable;
      tts += r.time_to_stabilize;
    }
  }
  const double n = static_cast<double>(rs.size());
  a.ttc_worst /= n;
  a.drac_worst /= n;
  a.fuel_economy /= n;
  a.throughput /= n;
  a.cav /= n;
  a.mean_velocity /= n;
  int n_lit = 0;
  for (const auto& r : rs) n_lit += std::isfinite(r.war_literal) ? 1 : 0;
  a.war = mean_or(a.war, a.war_count, std::nan(""));
  a.war_literal = mean_or(a.war_literal, n_lit, std::nan(""));
  a.stable_fraction = n_stable / n;
  a.time_to_stabilize = mean_or(tts, n_stable, kInf);
  return a;
}

std::string aggregate_to_json(const AggregateReport& a) {
  ojson j;
  j["n_seeds"] = a.n;
  j["ttc_worst"] = jnum(a.ttc_worst);
  j["drac_worst"] = jnum(a.drac_worst);
  j["fuel_economy_mpg"] = jnum(a.fuel_economy);
  j["throughput_veh_per_hr"] = jnum(a.throughput);
  j["cav"] = jnum(a.cav);
  j["war"] = jnum(a.war);
  j["war_literal"] = jnum(a.war_literal);
  j["war_seeds"] = a.war_count;
  j["stable_fraction"] = a.stable_fraction;
  j["time_to_stabilize_s"] = jnum(a.time_to_stabilize);
  j["mean_velocity"] = jnum(a.mean_velocity);
  return j.dump(2);
}

std::string aggregate_csv_header() {
  return "n_seeds,ttc_worst,drac_worst,fuel_economy_mpg,throughput_veh_per_hr,cav,war,"
         "war_literal,stable_fraction,time_to_stabilize_s,mean_velocity";
}

std::string aggregate_csv_row(const AggregateReport& a) {
  return std::to_string(a.n) + "," + num(a.ttc_worst) + "," + num(a.drac_worst) + "," +
         num(a.fuel_economy) + "," + num(a.throughput) + "," + num(a.cav) + "," + num(a.war) +
         "," + num(a.war_literal) + "," + num(a.stable_fraction) + "," +
         num(a.time_to_stabilize) + "," + num(a.mean_velocity);
}

namespace {

Trace run_seed(const ExperimentConfig& c, const FleetSpec& fleet, const AccelEventModel& hm,
               std::uint64_t seed) {
  try {
    return run_episode(c.scenario, fleet, c.schedule, seed, &hm);
  } catch (const std::exception& e) {
    throw SimulationError("seed " + std::to_string(seed) + ": " + e.what());
  }
}

void write_trace_files(const fs::path& dir, const std::string& stem, const Trace& tr) {
  write_trace_csv(tr, (dir / (stem + ".csv")).string());
  write_trace_meta(tr, (dir / (stem + ".meta.json")).string());
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& c, bool write_outputs) {
  c.validate();
  const auto fleet = make_fleet(c);
  const auto hm = humanizer_model(c);
  const fs::path dir(c.out_dir);
  if (write_outputs) {
    fs::create_directories(dir);
    write_file(dir / "config.json", experiment_config_to_json(c).dump(2));
  }
  ExperimentResult res;
  std::vector<MetricsReport> reports;
  for (auto seed : c.seeds) {
    const auto tr = run_seed(c, fleet, hm, seed);
    SeedResult sr{seed, compute_metrics(tr, c.metrics)};
    if (write_outputs) {
      write_file(dir / ("seed_" + seed_tag(seed) + ".json"), metrics_to_json(sr.report));
      if (c.write_traces) write_trace_files(dir, "trace_seed_" + seed_tag(seed), tr);
    }
    reports.push_back(sr.report);
    res.per_seed.push_back(std::move(sr));
  }
  res.aggregate = aggregate(reports);
  if (write_outputs) {
    std::ostringstream csv;
    csv << "seed," << metrics_csv_header() << "\n";
    for (const auto& s : res.per_seed) csv << s.seed << "," << metrics_csv_row(s.report) << "\n";
    write_file(dir / "metrics.csv", csv.str());
    write_file(dir / "aggregate.json", aggregate_to_json(res.aggregate));
  }
  return res;
}

double default_perturbation_start(const ExperimentConfig& c) {
  if (c.controller == ControllerKind::idm || c.resolved_rv_count() == 0) {
    // Before the ring destabilises; still inside warmup for the default schedule.
    return std::min(150.0, 0.5 * c.schedule.end_time());
  }
  return std::max(c.schedule.activation_time(), c.schedule.end_time() - 50.0);
}

std::string velocity_table_csv(const Trace& tr) {
  std::set<int> ids;
  for (const auto& s : tr.snapshots) {
    for (const auto& v : s.vehicles) ids.insert(v.id);
  }
  std::ostringstream out;
  out << "time_s";
  for (int id : ids) out << ",v_" << id;
  out << "\n";
  char b[32];
  std::map<int, double> row;
  for (const auto& s : tr.snapshots) {
    row.clear();
    for (const auto& v : s.vehicles) row[v.id] = v.velocity;
    std::snprintf(b, sizeof b, "%.1f", s.time);
    out << b;
    for (int id : ids) {
      auto it = row.find(id);
      if (it == row.end()) {
        out << ",";
      } else {
        std::snprintf(b, sizeof b, ",%.6g", it->second);
        out << b;
      }
    }
    out << "\n";
  }
  return out.str();
}

std::vector<PerturbationResult> run_perturbation_test(const ExperimentConfig& base,
                                                      bool write_outputs) {
  ExperimentConfig c = base;
  if (!c.schedule.perturbation) {
    PerturbationSpec p;
    p.start_s = default_perturbation_start(c);
    c.schedule.perturbation = p;
  }
  c.schedule.record_stride = 1;
  c.validate();
  const bool rv_case = c.controller != ControllerKind::idm && c.resolved_rv_count() > 0;
  const auto fleet = make_fleet(c);
  const auto hm = humanizer_model(c);
  const fs::path dir(c.out_dir);
  if (write_outputs) {
    fs::create_directories(dir);
    write_file(dir / "config.json", experiment_config_to_json(c).dump(2));
  }
  std::vector<PerturbationResult> out;
  for (auto seed : c.seeds) {
    const auto tr = run_seed(c, fleet, hm, seed);
    PerturbationResult pr;
    pr.seed = seed;
    pr.report = compute_metrics(tr, c.metrics);
    pr.target_id = tr.meta.perturbation_target;
    const auto t_on = tr.meta.perturbation_start;
    for (const auto& s : tr.snapshots) {
      if (std::abs(s.time - t_on) > 0.5 * c.schedule.dt) continue;
      for (const auto& v : s.vehicles) {
        if (v.leader_id == pr.target_id && v.id != pr.target_id) pr.follower_id = v.id;
      }
    }
    if (rv_case) {
      const double settled = c.schedule.activation_time() + pr.report.time_to_stabilize;
      if (!pr.report.stable || settled > t_on) {
        pr.warnings.push_back("perturbation at " + num(t_on) +
                              " s precedes stabilisation of the network");
      }
    }
    if (!std::isfinite(pr.report.war)) pr.warnings.push_back("WAR undefined for this seed");
    for (const auto& w : pr.warnings) std::cerr << "warning: seed " << seed << ": " << w << "\n";
    if (write_outputs) {
      ojson j;
      j["seed"] = seed;
      j["target_id"] = pr.target_id;
      j["follower_id"] = pr.follower_id;
      j["perturbation_start_s"] = t_on;
      j["dv_lead"] = jnum(pr.report.dv_lead);
      j["dv_follow"] = jnum(pr.report.dv_follow);
      j["war_dampening"] = jnum(c.metrics.war_convention == WarConvention::dampening
                                    ? pr.report.war : pr.report.war_literal);
      j["war_literal"] = jnum(c.metrics.war_convention == WarConvention::dampening
                                  ? pr.report.war_literal : pr.report.war);
      j["warnings"] = pr.warnings;
      write_file(dir / ("war_seed_" + seed_tag(seed) + ".json"), j.dump(2));
      write_file(dir / ("velocity_seed_" + seed_tag(seed) + ".csv"), velocity_table_csv(tr));
    }
    out.push_back(std::move(pr));
  }
  return out;
}

SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "density") return SweepAxis::density;
  if (s == "penetration") return SweepAxis::penetration;
  if (s == "controller") return SweepAxis::controller;
  throw ConfigError("sweep axis: expected density|penetration|controller, got '" + s + "'");
}

namespace {

ExperimentConfig cell_config(const ExperimentConfig& base, SweepAxis axis, const std::string& v,
                             std::size_t index) {
  ExperimentConfig c = base;
  c.out_dir = (fs::path(base.out_dir) / ("cell_" + std::to_string(index))).string();
  double x = 0.0;
  if (axis != SweepAxis::controller) {
    try {
      std::size_t used = 0;
      x = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
    } catch (const std::exception&) {
      throw ConfigError("sweep value '" + v + "' is not a number");
    }
  }
  switch (axis) {
    case SweepAxis::density:
      if (c.is_ring()) {
        const auto& r = std::get<RingScenario>(c.scenario);
        auto nr = RingScenario::from_density(x, r.n_vehicles);
        nr.speed_limit = r.speed_limit;
        nr.vehicle_length = r.vehicle_length;
        c.scenario = nr;
      } else {
        std::get<BottleneckScenario>(c.scenario).inflow_rate = x;
      }
      break;
    case SweepAxis::penetration:
      c.penetration = x;
      c.rv_count.reset();
      break;
    case SweepAxis::controller:
      c.controller = parse_controller_kind(v);
      break;
  }
  c.validate();
  return c;
}

}  // namespace

std::vector<SweepCell> sweep(const ExperimentConfig& base, SweepAxis axis,
                             const std::vector<std::string>& values, int workers,
                             bool write_outputs) {
  if (values.empty()) throw ConfigError("sweep: empty value list");
  if (workers < 1) throw ConfigError("sweep: workers must be >= 1");
  std::vector<SweepCell> cells(values.size());
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= values.size()) return;
      auto& cell = cells[i];
      cell.value = values[i];
      try {
        const auto c = cell_config(base, axis, values[i], i);
        cell.rv_count = c.resolved_rv_count();
        cell.aggregate = run_experiment(c, write_outputs).aggregate;
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
      }
    }
  };
  const int n = std::min<int>(workers, static_cast<int>(values.size()));
  std::vector<std::thread> pool;
  for (int w = 1; w < n; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  if (write_outputs) {
    fs::create_directories(base.out_dir);
    std::ostringstream csv;
    const char* axis_name = axis == SweepAxis::density ? "density"
                            : axis == SweepAxis::penetration ? "penetration" : "controller";
    csv << "cell," << axis_name << ",rv_count,status,error," << aggregate_csv_header() << "\n";
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto& c = cells[i];
      std::string err = c.error;
      for (auto& ch : err) {
        if (ch == ',' || ch == '\n' || ch == '"') ch = ';';
      }
      csv << i << "," << c.value << "," << c.rv_count << "," << (c.ok ? "ok" : "failed") << ","
          << err << "," << (c.ok ? aggregate_csv_row(c.aggregate) : aggregate_csv_row({})) << "\n";
    }
    write_file(fs::path(base.out_dir) / "sweep.csv", csv.str());
  }
  return cells;
}

}  // namespace mtc

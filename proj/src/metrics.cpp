#include "mtc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include <json.hpp>

namespace mtc {

namespace {

constexpr double kMetersPerMile = 1609.344;
constexpr double kMlPerGallon = 3785.411784;

const VehicleState* find_vehicle(const Snapshot& s, int id) {
  auto it = std::lower_bound(s.vehicles.begin(), s.vehicles.end(), id,
                             [](const VehicleState& v, int x) { return v.id < x; });
  if (it == s.vehicles.end() || it->id != id) return nullptr;
  return &*it;
}

// Snapshot indices with time in [t0, t1].
std::pair<std::size_t, std::size_t> index_range(const Trace& tr, double t0, double t1) {
  const double eps = 1e-9;
  auto lo = std::lower_bound(tr.snapshots.begin(), tr.snapshots.end(), t0 - eps,
                             [](const Snapshot& s, double t) { return s.time < t; });
  auto hi = std::upper_bound(tr.snapshots.begin(), tr.snapshots.end(), t1 + eps,
                             [](double t, const Snapshot& s) { return t < s.time; });
  return {static_cast<std::size_t>(lo - tr.snapshots.begin()),
          static_cast<std::size_t>(hi - tr.snapshots.begin())};
}

double record_interval(const Trace& tr) { return tr.meta.dt * tr.meta.record_stride; }

std::string num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

nlohmann::json jnum(double x) {
  if (!std::isfinite(x)) return nullptr;
  return x;
}

}  // namespace

double ttc(double v_f, double v_l, double s, double l) {
  if (!(s > l)) throw DomainError("ttc: space headway must exceed the leader length");
  if (!(v_f > v_l)) return kInf;
  return (s - l) / (v_f - v_l);
}

double drac(double v_f, double v_l, double s, double l) {
  if (!(s > l)) throw DomainError("drac: space headway must exceed the leader length");
  if (!(v_f > v_l)) return 0.0;
  return (v_f - v_l) * (v_f - v_l) / (s - l);
}

double war(double dv_lead, double dv_follow, WarConvention c) {
  if (!(dv_lead > 0)) throw DomainError("war: the leader must show a velocity drop");
  if (c == WarConvention::dampening) return 1.0 - dv_follow / dv_lead;
  if (dv_follow == 0) throw DomainError("war: zero follower drop under the literal form");
  return 1.0 - dv_lead / dv_follow;
}

double cav(const std::vector<double>& accel) {
  if (accel.size() < 2) throw DomainError("cav: need at least two samples");
  // shift by the first sample; a constant series then gives exactly 0
  const double ref = accel.front();
  double mean = 0.0;
  for (double a : accel) mean += a - ref;
  mean /= static_cast<double>(accel.size());
  double ss = 0.0;
  for (double a : accel) ss += (a - ref - mean) * (a - ref - mean);
  return std::sqrt(ss / static_cast<double>(accel.size()));
}

double FuelModel::rate(double v, double a) const {
  return std::max(0.0, c0 + c1 * v + c2 * v * v * v + c4 * std::max(0.0, a) * v);
}

void FuelAccumulator::add(double v, double a, double dt) {
  distance_ += v * dt;
  fuel_ += m_.rate(v, a) * dt;
}

FuelEconomy FuelAccumulator::result() const {
  FuelEconomy f;
  f.distance_m = distance_;
  f.fuel_ml = fuel_;
  if (fuel_ <= 0) {
    f.infinite = true;
    f.mpg = kInf;
    return f;
  }
  f.mpg = (distance_ / kMetersPerMile) / (fuel_ / kMlPerGallon);
  return f;
}

FuelEconomy fuel_economy(const Trace& trace, double t0, double t1, const FuelModel& m) {
  FuelAccumulator acc(m);
  const auto [lo, hi] = index_range(trace, t0, t1);
  const double dt = record_interval(trace);
  // Each snapshot stands for the interval that produced it.
  for (std::size_t k = std::max<std::size_t>(lo, 1); k < hi; ++k) {
    for (const auto& v : trace.snapshots[k].vehicles) acc.add(v.velocity, v.acceleration, dt);
  }
  return acc.result();
}

Series network_mean_velocity(const Trace& trace) {
  Series s;
  s.time.reserve(trace.snapshots.size());
  s.value.reserve(trace.snapshots.size());
  for (const auto& snap : trace.snapshots) {
    double m = 0.0;
    for (const auto& v : snap.vehicles) m += v.velocity;
    s.time.push_back(snap.time);
    s.value.push_back(snap.vehicles.empty() ? 0.0 : m / snap.vehicles.size());
  }
  return s;
}

Stability stability_check(const Series& series, double sigma, double window_s, double t0,
                          double t1, double origin) {
  if (!(window_s > 0)) throw DomainError("stability_check: window must be positive");
  if (!(t1 - t0 >= window_s - 1e-9)) {
    throw DomainError("stability_check: evaluation span shorter than the window");
  }
  const double eps = 1e-9;
  Stability out;
  const auto& t = series.time;
  const auto& v = series.value;
  std::size_t start = 0;
  for (std::size_t end = 0; end < t.size(); ++end) {
    if (t[end] < t0 + window_s - eps || t[end] > t1 + eps) continue;
    while (t[start] < t[end] - window_s - eps) ++start;
    // window is (t_end - window, t_end]: exclude a sample sitting exactly on the left edge
    std::size_t first = start;
    if (std::abs(t[first] - (t[end] - window_s)) <= eps && first < end) ++first;
    const std::size_t n = end - first + 1;
    double mean = 0.0;
    for (std::size_t k = first; k <= end; ++k) mean += v[k];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t k = first; k <= end; ++k) ss += (v[k] - mean) * (v[k] - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    out.window_end.push_back(t[end]);
    out.window_std.push_back(sd);
    out.max_std = std::max(out.max_std, sd);
  }
  if (out.window_std.empty()) return out;
  out.final_std = out.window_std.back();
  out.stable = out.final_std < sigma;
  if (out.stable) {
    std::size_t k = out.window_std.size() - 1;
    while (k > 0 && out.window_std[k - 1] < sigma) --k;
    out.time_to_stabilize = out.window_end[k] - origin;
  }
  return out;
}

double throughput(const Trace& trace, double t0, double t1, double reference) {
  if (!(t1 > t0)) return 0.0;
  long count = 0;
  if (trace.meta.scenario == "bottleneck") {
    for (const auto& e : trace.events) {
      if (e.kind == "exit" && e.time > t0 + 1e-9 && e.time <= t1 + 1e-9) ++count;
    }
  } else {
    const double L = trace.meta.ring_length;
    const auto [lo, hi] = index_range(trace, t0, t1);
    for (std::size_t k = lo + 1; k < hi; ++k) {
      const auto& prev = trace.snapshots[k - 1];
      for (const auto& v : trace.snapshots[k].vehicles) {
        const auto* p = find_vehicle(prev, v.id);
        if (!p) continue;
        double moved = std::fmod(v.position - p->position, L);
        if (moved < 0) moved += L;
        double from = std::fmod(p->position - reference, L);
        if (from < 0) from += L;
        if (moved > 0 && from + moved >= L) ++count;
      }
    }
  }
  return static_cast<double>(count) * 3600.0 / (t1 - t0);
}

double velocity_drop(const Trace& trace, int vehicle_id, double t_on, double window_s) {
  const auto [lo, hi] = index_range(trace, t_on, t_on + window_s);
  double v0 = std::numeric_limits<double>::quiet_NaN();
  double vmin = kInf;
  for (std::size_t k = lo; k < hi; ++k) {
    const auto* v = find_vehicle(trace.snapshots[k], vehicle_id);
    if (!v) continue;
    if (std::isnan(v0)) v0 = v->velocity;
    vmin = std::min(vmin, v->velocity);
  }
  if (std::isnan(v0)) throw DomainError("velocity_drop: vehicle absent from the window");
  return v0 - vmin;
}

std::vector<int> metric_subjects(const Trace& trace, double t0, double t1) {
  const auto [lo, hi] = index_range(trace, t0, t1);
  std::set<int> rvs;
  for (std::size_t k = lo; k < hi; ++k) {
    for (const auto& v : trace.snapshots[k].vehicles) {
      if (v.is_rv) rvs.insert(v.id);
    }
  }
  if (!rvs.empty()) return {rvs.begin(), rvs.end()};
  if (lo >= hi || trace.snapshots[lo].vehicles.empty()) return {};
  const auto& pool = trace.snapshots[lo].vehicles;
  Rng r = make_rng(trace.meta.seed, stream::metrics);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  return {pool[pick(r)].id};
}

MetricsReport compute_metrics(const Trace& trace, const MetricsOptions& opt) {
  if (trace.snapshots.empty()) throw DomainError("compute_metrics: empty trace");
  MetricsReport r;
  const double end = trace.snapshots.back().time;
  r.window_end = opt.window_end >= 0 ? opt.window_end : end;
  r.window_start = opt.window_start >= 0 ? opt.window_start
                                         : std::max(0.0, r.window_end - opt.measurement_window_s);
  if (!(r.window_end > r.window_start)) throw DomainError("compute_metrics: empty window");
  const auto [lo, hi] = index_range(trace, r.window_start, r.window_end);

  r.subjects = metric_subjects(trace, r.window_start, r.window_end);
  std::set<int> subjects(r.subjects.begin(), r.subjects.end());
  std::vector<std::vector<double>> accel(r.subjects.size());
  double vsum = 0.0;
  long vcount = 0;
  for (std::size_t k = lo; k < hi; ++k) {
    const auto& snap = trace.snapshots[k];
    for (const auto& v : snap.vehicles) {
      vsum += v.velocity;
      ++vcount;
      if (!subjects.count(v.id)) continue;
      const auto idx = std::lower_bound(r.subjects.begin(), r.subjects.end(), v.id) -
                       r.subjects.begin();
      if (k > lo) accel[idx].push_back(v.acceleration);
      if (v.leader_id < 0 || v.leader_id == v.id || !(v.gap > 0)) continue;
      if (v.flags & flags::projected_leader) continue;
      const auto* l = find_vehicle(snap, v.leader_id);
      if (!l) continue;
      const double s = v.gap + l->length;
      const double t = ttc(v.velocity, l->velocity, s, l->length);
      if (std::isfinite(t)) r.ttc_worst = std::min(r.ttc_worst, t);
      r.drac_worst = std::max(r.drac_worst, drac(v.velocity, l->velocity, s, l->length));
    }
  }
  r.mean_velocity = vcount ? vsum / static_cast<double>(vcount) : 0.0;
  for (const auto& a : accel) {
    if (a.size() >= 2) r.cav = std::max(r.cav, cav(a));
  }

  const auto fe = fuel_economy(trace, r.window_start, r.window_end, opt.fuel);
  r.fuel_economy = fe.mpg;
  r.fuel_infinite = fe.infinite;
  r.throughput = throughput(trace, r.window_start, r.window_end, opt.reference_position);

  const double activation = trace.meta.warmup_steps * trace.meta.dt;
  const auto series = network_mean_velocity(trace);
  if (end - activation >= opt.stability_window_s - 1e-9) {
    const auto st = stability_check(series, opt.noise_sigma, opt.stability_window_s, activation,
                                     end, activation);
    r.stable = st.stable;
    r.time_to_stabilize = st.time_to_stabilize;
    r.stability_std = st.final_std;
  }

  if (trace.meta.perturbation_target >= 0) {
    const double t_on = trace.meta.perturbation_start;
    const auto [plo, phi] = index_range(trace, t_on, t_on);
    int follower = -1;
    if (plo < phi) {
      for (const auto& v : trace.snapshots[plo].vehicles) {
        if (v.leader_id == trace.meta.perturbation_target && v.id != v.leader_id) follower = v.id;
      }
    }
    if (follower >= 0) {
      r.dv_lead = velocity_drop(trace, trace.meta.perturbation_target, t_on, opt.war_window_s);
      r.dv_follow = velocity_drop(trace, follower, t_on, opt.war_window_s);
      if (r.dv_lead > 0) {
        r.war = war(r.dv_lead, r.dv_follow, WarConvention::dampening);
        if (r.dv_follow > 0) r.war_literal = war(r.dv_lead, r.dv_follow, WarConvention::ratio_literal);
        if (opt.war_convention == WarConvention::ratio_literal) std::swap(r.war, r.war_literal);
      }
    }
  }
  return r;
}

std::string metrics_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["ttc_worst"] = jnum(r.ttc_worst);
  j["drac_worst"] = jnum(r.drac_worst);
  j["fuel_economy_mpg"] = jnum(r.fuel_economy);
  j["fuel_infinite"] = r.fuel_infinite;
  j["throughput_veh_per_hr"] = jnum(r.throughput);
  j["cav"] = jnum(r.cav);
  j["war"] = jnum(r.war);
  j["war_literal"] = jnum(r.war_literal);
  j["dv_lead"] = jnum(r.dv_lead);
  j["dv_follow"] = jnum(r.dv_follow);
  j["stable"] = r.stable;
  j["time_to_stabilize_s"] = jnum(r.time_to_stabilize);
  j["stability_std"] = jnum(r.stability_std);
  j["mean_velocity"] = jnum(r.mean_velocity);
  j["window"] = {r.window_start, r.window_end};
  j["subjects"] = r.subjects;
  return j.dump(2);
}

std::string metrics_csv_header() {
  return "ttc_worst,drac_worst,fuel_economy_mpg,throughput_veh_per_hr,cav,war,war_literal,"
         "stable,time_to_stabilize_s,stability_std,mean_velocity,window_start,window_end";
}

std::string metrics_csv_row(const MetricsReport& r) {
  return num(r.ttc_worst) + "," + num(r.drac_worst) + "," + num(r.fuel_economy) + "," +
         num(r.throughput) + "," + num(r.cav) + "," + num(r.war) + "," + num(r.war_literal) +
         "," + (r.stable ? "1" : "0") + "," + num(r.time_to_stabilize) + "," +
         num(r.stability_std) + "," + num(r.mean_velocity) + "," + num(r.window_start) + "," +
         num(r.window_end);
}

}  // namespace mtc

#include "mtc/trajectory_filter.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace mtc {

namespace {

constexpr double kTimeTol = 1e-3;

struct Track {
  std::vector<const TrajectoryRecord*> rows;

  const TrajectoryRecord* at(double t) const {
    auto it = std::lower_bound(rows.begin(), rows.end(), t - kTimeTol,
                               [](const TrajectoryRecord* r, double x) { return r->time < x; });
    if (it == rows.end() || std::abs((*it)->time - t) > kTimeTol) return nullptr;
    return *it;
  }
};

std::map<int, Track> group_tracks(const std::vector<TrajectoryRecord>& records) {
  std::map<int, Track> tracks;
  for (const auto& r : records) {
    auto& tr = tracks[r.vehicle_id];
    if (!tr.rows.empty() && !(r.time > tr.rows.back()->time)) {
      throw IoError("trajectory: records of vehicle " + std::to_string(r.vehicle_id) +
                    " are not strictly increasing in time (t=" + std::to_string(r.time) + ")");
    }
    tr.rows.push_back(&r);
  }
  return tracks;
}

// Candidate sample plus the key that must stay fixed over a period.
struct Candidate {
  FollowingSample s;
  int leader = -1;
  int lane = 0;
  bool ok = false;
};

template <class Emit>
void split_runs(const std::vector<Candidate>& c, const FilterOptions& opt, Emit emit) {
  std::size_t i = 0;
  while (i < c.size()) {
    if (!c[i].ok) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < c.size() && c[j].ok && c[j].leader == c[i].leader && c[j].lane == c[i].lane &&
           c[j].s.time - c[j - 1].s.time <= opt.max_sample_gap + 1e-9) {
      ++j;
    }
    if (c[j - 1].s.time - c[i].s.time >= opt.min_duration - 1e-9) emit(i, j);
    i = j;
  }
}

CarFollowingPeriod make_period(int follower, const std::vector<Candidate>& c, std::size_t i,
                               std::size_t j) {
  CarFollowingPeriod p;
  p.follower_id = follower;
  p.leader_id = c[i].leader;
  p.lane = c[i].lane;
  p.start_time = c[i].s.time;
  p.end_time = c[j - 1].s.time;
  for (std::size_t k = i; k < j; ++k) p.samples.push_back(c[k].s);
  return p;
}

}  // namespace

bool sample_passes(const FollowingSample& s, const FilterOptions& opt) {
  return s.v > opt.min_speed_frac * opt.speed_limit && s.headway > 0.0 &&
         s.headway < opt.max_headway;
}

void resolve_leaders(std::vector<TrajectoryRecord>& records) {
  // Bucket by (time, lane), sort by position, link each to the next ahead.
  std::map<std::pair<long long, int>, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].leader_id) continue;
    const auto key = std::llround(records[i].time / kTimeTol);
    buckets[{key, records[i].lane}];
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto key = std::make_pair(std::llround(records[i].time / kTimeTol), records[i].lane);
    auto it = buckets.find(key);
    if (it != buckets.end()) it->second.push_back(i);
  }
  for (auto& [key, idx] : buckets) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return records[a].position < records[b].position;
    });
    for (std::size_t k = 0; k + 1 < idx.size(); ++k) {
      auto& r = records[idx[k]];
      if (!r.leader_id) r.leader_id = records[idx[k + 1]].vehicle_id;
    }
  }
}

std::vector<double> extract_accelerations(const std::vector<double>& t,
                                          const std::vector<double>& v) {
  if (t.size() != v.size()) throw DomainError("extract_accelerations: size mismatch");
  const std::size_t n = t.size();
  if (n < 2) throw DomainError("extract_accelerations: need at least 2 samples");
  std::vector<double> a(n);
  a[0] = (v[1] - v[0]) / (t[1] - t[0]);
  a[n - 1] = (v[n - 1] - v[n - 2]) / (t[n - 1] - t[n - 2]);
  for (std::size_t i = 1; i + 1 < n; ++i) a[i] = (v[i + 1] - v[i - 1]) / (t[i + 1] - t[i - 1]);
  return a;
}

std::vector<double> extract_accelerations(const CarFollowingPeriod& p) {
  std::vector<double> t, v;
  for (const auto& s : p.samples) {
    t.push_back(s.time);
    v.push_back(s.v);
  }
  return extract_accelerations(t, v);
}

std::vector<CarFollowingPeriod> detect_periods(const std::vector<TrajectoryRecord>& records,
                                               const FilterOptions& opt) {
  if (!(opt.speed_limit > 0)) throw ConfigError("filter: speed limit must be > 0");
  if (!(opt.max_headway > 0)) throw ConfigError("filter: max headway must be > 0");
  const auto tracks = group_tracks(records);
  std::vector<CarFollowingPeriod> out;
  for (const auto& [id, tr] : tracks) {
    std::vector<Candidate> c;
    c.reserve(tr.rows.size());
    for (const auto* r : tr.rows) {
      Candidate k;
      k.s.time = r->time;
      k.s.v = r->velocity;
      k.lane = r->lane;
      if (r->leader_id && *r->leader_id != id) {
        auto lt = tracks.find(*r->leader_id);
        const TrajectoryRecord* l = lt == tracks.end() ? nullptr : lt->second.at(r->time);
        if (l && l->lane == r->lane) {
          k.leader = l->vehicle_id;
          k.s.headway = l->position - r->position;
          k.s.v_lead = l->velocity;
          k.ok = sample_passes(k.s, opt);
        }
      }
      c.push_back(k);
    }
    split_runs(c, opt, [&](std::size_t i, std::size_t j) {
      auto p = make_period(id, c, i, j);
      const auto a = extract_accelerations(p);
      for (std::size_t k = 0; k < a.size(); ++k) p.samples[k].accel = a[k];
      out.push_back(std::move(p));
    });
  }
  return out;
}

std::vector<CarFollowingPeriod> detect_periods(const std::vector<TrajectoryRecord>& records,
                                               double speed_limit, double max_headway) {
  FilterOptions opt;
  opt.speed_limit = speed_limit;
  opt.max_headway = max_headway;
  return detect_periods(records, opt);
}

std::vector<CarFollowingPeriod> refilter(const CarFollowingPeriod& period,
                                         const FilterOptions& opt) {
  std::vector<Candidate> c;
  for (const auto& s : period.samples) {
    c.push_back({s, period.leader_id, period.lane, sample_passes(s, opt)});
  }
  std::vector<CarFollowingPeriod> out;
  split_runs(c, opt, [&](std::size_t i, std::size_t j) {
    out.push_back(make_period(period.follower_id, c, i, j));
  });
  return out;
}

void ExcursionStats::append(const ExcursionStats& o) {
  durations.insert(durations.end(), o.durations.begin(), o.durations.end());
  gaps.insert(gaps.end(), o.gaps.begin(), o.gaps.end());
  pairs.insert(pairs.end(), o.pairs.begin(), o.pairs.end());
}

ExcursionStats excursion_stats(const std::vector<double>& a, const std::vector<double>& t,
                               double band) {
  if (a.size() != t.size()) throw DomainError("excursion_stats: size mismatch");
  ExcursionStats st;
  if (a.empty()) return st;
  double dt = 0.1;
  if (t.size() >= 2) {
    std::vector<double> d;
    for (std::size_t i = 1; i < t.size(); ++i) d.push_back(t[i] - t[i - 1]);
    std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
    dt = d[d.size() / 2];
  }
  double prev_start = 0.0;
  bool have_prev = false;
  std::size_t i = 0;
  while (i < a.size()) {
    if (std::abs(a[i]) <= band) {
      ++i;
      continue;
    }
    std::size_t j = i;
    double peak = 0.0;
    while (j < a.size() && std::abs(a[j]) > band) {
      if (std::abs(a[j]) > std::abs(peak)) peak = a[j];
      ++j;
    }
    const double dur = static_cast<double>(j - i) * dt;
    st.durations.push_back(dur);
    st.pairs.push_back({peak, dur});
    if (have_prev) st.gaps.push_back(t[i] - prev_start);
    prev_start = t[i];
    have_prev = true;
    i = j;
  }
  return st;
}

AccelEventModel build_histogram(const std::vector<double>& accels, double w,
                                const ExcursionStats* stats) {
  if (accels.empty()) throw DomainError("build_histogram: no samples");
  if (!(w > 0)) throw ConfigError("build_histogram: bin width must be > 0");
  const auto [lo_it, hi_it] = std::minmax_element(accels.begin(), accels.end());
  const long k0 = static_cast<long>(std::floor(*lo_it / w));
  const long k1 = static_cast<long>(std::floor(*hi_it / w));
  std::vector<double> count(static_cast<std::size_t>(k1 - k0 + 1), 0.0);
  for (double x : accels) {
    if (!std::isfinite(x)) throw DomainError("build_histogram: non-finite sample");
    const long k = std::clamp(static_cast<long>(std::floor(x / w)), k0, k1);
    count[static_cast<std::size_t>(k - k0)] += 1.0;
  }
  AccelEventModel m;
  const double n = static_cast<double>(accels.size());
  for (std::size_t i = 0; i < count.size(); ++i) {
    const double low = static_cast<double>(k0 + static_cast<long>(i)) * w;
    m.bins.push_back({low, low + w, count[i] / n});
  }
  if (stats) {
    if (!stats->durations.empty()) {
      const auto [a, b] = std::minmax_element(stats->durations.begin(), stats->durations.end());
      m.duration_min = *a;
      m.duration_max = *b;
    }
    if (!stats->gaps.empty()) {
      const auto [a, b] = std::minmax_element(stats->gaps.begin(), stats->gaps.end());
      if (*a > 0) {
        m.gap_min = *a;
        m.gap_max = *b;
      }
    }
    // Fit y = x^p through the origin in log space, with x the normalised
    // distance below the magnitude cap and y the normalised duration.
    const double cap = m.magnitude_cap();
    const double edge = std::max(std::abs(m.nominal_low), std::abs(m.nominal_high));
    const double span = m.duration_max - m.duration_min;
    double sxy = 0.0, sxx = 0.0;
    int used = 0;
    if (cap > edge && span > 0) {
      for (const auto& pr : stats->pairs) {
        const double x = (cap - std::abs(pr.magnitude)) / (cap - edge);
        const double y = (pr.duration - m.duration_min) / span;
        if (x > 0 && x < 1 && y > 0 && y < 1) {
          sxy += std::log(x) * std::log(y);
          sxx += std::log(x) * std::log(x);
          ++used;
        }
      }
    }
    if (used >= 3 && sxx > 0) m.magnitude_duration_exponent = std::clamp(sxy / sxx, 0.1, 10.0);
  }
  return m;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell += ch;
    }
  }
  out.push_back(cell);
  for (auto& c : out) {
    const auto b = c.find_first_not_of(" \t");
    const auto e = c.find_last_not_of(" \t");
    c = b == std::string::npos ? std::string() : c.substr(b, e - b + 1);
  }
  return out;
}

int find_column(const std::vector<std::string>& header, std::initializer_list<const char*> names) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    std::string h = header[i];
    std::transform(h.begin(), h.end(), h.begin(), [](unsigned char c) { return std::tolower(c); });
    for (const char* n : names) {
      if (h == n) return static_cast<int>(i);
    }
  }
  return -1;
}

}  // namespace

std::vector<TrajectoryRecord> parse_trajectory_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError("trajectory csv: empty input");
  const auto header = split_csv(line);
  const int c_time = find_column(header, {"time", "time_s", "t"});
  const int c_id = find_column(header, {"vehicle_id", "id", "vehicle"});
  const int c_lane = find_column(header, {"lane", "lane_id"});
  const int c_pos = find_column(header, {"position", "position_m", "x"});
  const int c_vel = find_column(header, {"velocity", "velocity_mps", "speed", "v"});
  const int c_lead = find_column(header, {"leader_id", "leader", "preceding"});
  if (c_time < 0 || c_id < 0 || c_pos < 0 || c_vel < 0) {
    throw IoError("trajectory csv: need time, vehicle_id, position and velocity columns");
  }
  if (c_lead < 0 && c_lane < 0) {
    throw IoError("trajectory csv: no leader column and no lane column to derive leaders from");
  }
  std::vector<TrajectoryRecord> recs;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto c = split_csv(line);
    if (c.size() < header.size()) {
      throw IoError("trajectory csv line " + std::to_string(lineno) + ": too few columns");
    }
    TrajectoryRecord r;
    try {
      r.time = std::stod(c[static_cast<std::size_t>(c_time)]);
      r.vehicle_id = std::stoi(c[static_cast<std::size_t>(c_id)]);
      r.lane = c_lane >= 0 ? std::stoi(c[static_cast<std::size_t>(c_lane)]) : 0;
      r.position = std::stod(c[static_cast<std::size_t>(c_pos)]);
      r.velocity = std::stod(c[static_cast<std::size_t>(c_vel)]);
      if (c_lead >= 0) {
        const auto& s = c[static_cast<std::size_t>(c_lead)];
        if (!s.empty() && s != "-1" && s != "nan" && s != "NA") r.leader_id = std::stoi(s);
      }
    } catch (const std::exception&) {
      throw IoError("trajectory csv line " + std::to_string(lineno) + ": malformed number");
    }
    recs.push_back(r);
  }
  if (c_lead < 0) resolve_leaders(recs);
  return recs;
}

std::vector<TrajectoryRecord> read_trajectory_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open trajectory '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_trajectory_csv(ss.str());
}

void write_periods_csv(const std::vector<CarFollowingPeriod>& periods, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << "period,follower_id,leader_id,lane,time_s,headway_m,velocity_mps,lead_velocity_mps,"
       "accel_mps2\n";
  char buf[256];
  for (std::size_t i = 0; i < periods.size(); ++i) {
    const auto& p = periods[i];
    for (const auto& s : p.samples) {
      std::snprintf(buf, sizeof buf, "%zu,%d,%d,%d,%.4f,%.6g,%.6g,%.6g,%.6g\n", i, p.follower_id,
                    p.leader_id, p.lane, s.time, s.headway, s.v, s.v_lead, s.accel);
      f << buf;
    }
  }
}

std::string filter_stats_json(const std::vector<CarFollowingPeriod>& periods,
                              const ExcursionStats& st, const AccelEventModel& m) {
  nlohmann::ordered_json j;
  std::size_t samples = 0;
  double total = 0.0;
  for (const auto& p : periods) {
    samples += p.samples.size();
    total += p.duration();
  }
  j["periods"] = periods.size();
  j["samples"] = samples;
  j["total_duration_s"] = total;
  j["excursions"] = st.durations.size();
  j["nominal_mass"] = m.nominal_mass();
  j["duration_range_s"] = {m.duration_min, m.duration_max};
  j["gap_range_s"] = {m.gap_min, m.gap_max};
  j["magnitude_duration_exponent"] = m.magnitude_duration_exponent;
  return j.dump(2);
}

}  // namespace mtc

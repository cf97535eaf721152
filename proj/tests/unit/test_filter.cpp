#include <doctest.h>

#include <cmath>
#include <random>

#include "mtc/humanizer.hpp"
#include "mtc/trajectory_filter.hpp"

using namespace mtc;

namespace {

// Leader 1 ahead of follower 2 on lane 0, sampled at 0.1 s.
std::vector<TrajectoryRecord> pair_track(int n, double headway, double v, bool with_leader = true) {
  std::vector<TrajectoryRecord> out;
  for (int k = 0; k < n; ++k) {
    const double t = k * 0.1;
    // same binade for both positions, so the headway subtracts back exactly
    const double xf = 1100 + v * t;
    out.push_back({t, 1, 0, xf + headway, v, std::nullopt});
    TrajectoryRecord f{t, 2, 0, xf, v, std::nullopt};
    if (with_leader) f.leader_id = 1;
    out.push_back(f);
  }
  return out;
}

}  // namespace

TEST_CASE("no leader gives no periods") {
  std::vector<TrajectoryRecord> r;
  for (int k = 0; k < 200; ++k) r.push_back({k * 0.1, 7, 0, 15.0 * k * 0.1, 15, std::nullopt});
  CHECK(detect_periods(r, 30).empty());
}

TEST_CASE("constructed pair gives one ten second period") {
  auto p = detect_periods(pair_track(101, 50, 15), 30);
  REQUIRE(p.size() == 1);
  CHECK(p[0].follower_id == 2);
  CHECK(p[0].leader_id == 1);
  CHECK(p[0].duration() == doctest::Approx(10.0));
}

TEST_CASE("headway above the bound gives nothing") {
  CHECK(detect_periods(pair_track(101, 130, 15), 30).empty());
  CHECK(detect_periods(pair_track(101, 124, 15), 30).empty());
  CHECK(detect_periods(pair_track(101, 123.999, 15), 30).size() == 1);
}

TEST_CASE("speed condition is strict") {
  CHECK(detect_periods(pair_track(101, 50, 3.0), 30).empty());
  CHECK(detect_periods(pair_track(101, 50, 3.0001), 30).size() == 1);
}

TEST_CASE("exactly five seconds is kept") {
  CHECK(detect_periods(pair_track(51, 50, 15), 30).size() == 1);
  CHECK(detect_periods(pair_track(50, 50, 15), 30).empty());
}

TEST_CASE("leaders are derived from lane order") {
  auto r = pair_track(101, 50, 15, false);
  resolve_leaders(r);
  for (const auto& x : r) {
    if (x.vehicle_id == 2) CHECK(x.leader_id == 1);
    if (x.vehicle_id == 1) CHECK_FALSE(x.leader_id.has_value());
  }
  CHECK(detect_periods(r, 30).size() == 1);
}

TEST_CASE("unsorted input is rejected") {
  auto r = pair_track(60, 50, 15);
  std::swap(r[10], r[40]);
  CHECK_THROWS_AS(detect_periods(r, 30), IoError);
}

TEST_CASE("every emitted sample passes and refiltering is idempotent") {
  std::mt19937_64 g(5);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<TrajectoryRecord> r;
  double xl = 500, xf = 440, vl = 12, vf = 12;
  for (int k = 0; k < 3000; ++k) {
    const double t = k * 0.1;
    r.push_back({t, 1, 0, xl, vl, std::nullopt});
    r.push_back({t, 2, 0, xf, vf, 1});
    vl = std::max(0.0, vl + (u(g) - 0.5) * 0.8);
    vf = std::max(0.0, vf + (u(g) - 0.5) * 0.8 + 0.02 * ((xl - xf) - 60));
    xl += vl * 0.1;
    xf += vf * 0.1;
  }
  FilterOptions opt;
  const auto periods = detect_periods(r, opt);
  REQUIRE(!periods.empty());
  for (const auto& p : periods) {
    CHECK(p.duration() >= 5.0 - 1e-9);
    for (const auto& s : p.samples) CHECK(sample_passes(s, opt));
    const auto again = refilter(p, opt);
    REQUIRE(again.size() == 1);
    CHECK(again[0].samples.size() == p.samples.size());
    CHECK(again[0].start_time == p.start_time);
    CHECK(again[0].end_time == p.end_time);
  }
}

TEST_CASE("accelerations by finite differences") {
  std::vector<double> t, v;
  for (int k = 0; k < 30; ++k) {
    t.push_back(k * 0.1);
    v.push_back(2.0 * k * 0.1);
  }
  for (double a : extract_accelerations(t, v)) CHECK(std::abs(a - 2.0) < 1e-9);
  const auto mid = extract_accelerations({0, 0.1, 0.2}, {5.0, 5.1, 5.3});
  CHECK(mid[1] == doctest::Approx(1.5));
  for (double a : extract_accelerations({0, 0.1, 0.2, 0.3}, {4, 4, 4, 4})) CHECK(a == 0.0);
  CHECK_THROWS_AS(extract_accelerations({0}, {1}), DomainError);
}

TEST_CASE("excursion statistics") {
  std::vector<double> t, a;
  for (int k = 0; k < 600; ++k) {
    t.push_back(k * 0.1);
    a.push_back(0.3);
  }
  CHECK(excursion_stats(a, t).durations.empty());
  for (int k = 100; k < 112; ++k) a[k] = 2.0;
  for (int k = 400; k < 405; ++k) a[k] = -1.5;
  const auto s = excursion_stats(a, t);
  REQUIRE(s.durations.size() == 2);
  CHECK(s.durations[0] == doctest::Approx(1.2));
  CHECK(s.gaps.size() == 1);
  CHECK(s.gaps[0] == doctest::Approx(30.0));
}

TEST_CASE("histogram building") {
  auto one = build_histogram(std::vector<double>(50, 0.5), 1.0);
  REQUIRE(one.bins.size() == 1);
  CHECK(one.bins[0].low == 0.0);
  CHECK(one.bins[0].high == 1.0);
  CHECK(one.bins[0].mass == 1.0);
  std::mt19937_64 g(1);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> xs;
  for (int i = 0; i < 1000; ++i) xs.push_back(u(g));
  auto h = build_histogram(xs, 0.5);
  REQUIRE(h.bins.size() == 4);
  double total = 0;
  for (const auto& b : h.bins) {
    CHECK(std::abs(b.mass - 0.25) <= 0.05);
    total += b.mass;
  }
  CHECK(total == doctest::Approx(1.0));
  CHECK_THROWS(build_histogram({}, 0.5));
  auto back = parse_accel_histogram(format_accel_histogram(h));
  for (std::size_t i = 0; i < h.bins.size(); ++i) CHECK(back.bins[i].mass == h.bins[i].mass);
}

TEST_CASE("trajectory csv parsing") {
  const std::string text =
      "time,vehicle_id,lane,position,velocity,leader_id\n"
      "0.0,1,0,100,10,\n0.0,2,0,60,10,1\n0.1,1,0,101,10,\n0.1,2,0,61,10,1\n";
  const auto r = parse_trajectory_csv(text);
  REQUIRE(r.size() == 4);
  CHECK(r[1].leader_id == 1);
  CHECK_FALSE(r[0].leader_id.has_value());
  CHECK_THROWS_AS(parse_trajectory_csv("time,vehicle_id,position,velocity\n0,1,2,3\n"), IoError);
}

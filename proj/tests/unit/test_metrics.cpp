#include <doctest.h>

#include <cmath>
#include <random>

#include "mtc/metrics.hpp"
#include "oracles.hpp"

using namespace mtc;

namespace {

// n vehicles moving at v on a ring, recorded every step.
Trace uniform_ring(int n, double L, double v, double seconds, double dt = 0.1) {
  Trace t;
  t.meta.scenario = "ring";
  t.meta.ring_length = L;
  t.meta.dt = dt;
  const int steps = static_cast<int>(std::lround(seconds / dt));
  t.meta.horizon_steps = steps;
  for (int k = 0; k <= steps; ++k) {
    Snapshot s;
    s.step = k;
    s.time = k * dt;
    for (int i = 0; i < n; ++i) {
      VehicleState x;
      x.id = i;
      x.position = std::fmod(i * L / n + v * k * dt, L);
      x.velocity = v;
      x.leader_id = (i + 1) % n;
      x.gap = L / n - 5;
      s.vehicles.push_back(x);
    }
    t.snapshots.push_back(s);
  }
  return t;
}

}  // namespace

TEST_CASE("ttc and drac hand values") {
  CHECK(ttc(10, 5, 30, 5) == doctest::Approx(5.0));
  CHECK(ttc(12, 2, 55, 5) == doctest::Approx(5.0));
  CHECK(std::isinf(ttc(5, 5, 30, 5)));
  CHECK(std::isinf(ttc(4, 9, 30, 5)));
  CHECK(drac(10, 6, 13, 5) == doctest::Approx(2.0));
  CHECK(drac(8, 8, 40, 5) == 0.0);
  CHECK(drac(3, 8, 40, 5) == 0.0);
  CHECK_THROWS_AS(ttc(10, 5, 5, 5), DomainError);
  CHECK_THROWS_AS(drac(10, 5, 4, 5), DomainError);
}

TEST_CASE("ttc drac identity on random inputs") {
  std::mt19937_64 g(10);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 10000; ++i) {
    const double vl = 30 * u(g), vf = vl + 0.01 + 20 * u(g);
    const double l = 3 + 3 * u(g), s = l + 0.01 + 100 * u(g);
    CHECK(drac(vf, vl, s, l) * ttc(vf, vl, s, l) == doctest::Approx(vf - vl).epsilon(1e-12));
    CHECK(std::abs(ttc(vf, vl, s, l) - oracle::ttc(vf, vl, s, l)) < 1e-9);
  }
}

TEST_CASE("war conventions") {
  CHECK(war(3, 3) == 0.0);
  CHECK(war(3, 3, WarConvention::ratio_literal) == 0.0);
  CHECK(war(4, 0.4) == doctest::Approx(0.9));
  CHECK(war(4, 2) == doctest::Approx(0.5));
  CHECK(war(4, 2, WarConvention::ratio_literal) == doctest::Approx(-1.0));
  CHECK(war(4, 0) == 1.0);
  CHECK_THROWS_AS(war(4, 0, WarConvention::ratio_literal), DomainError);
  CHECK_THROWS_AS(war(0, 1), DomainError);
  for (double f : {0.1, 1.0, 7.0}) CHECK(war(2.0, f) < 1.0);
}

TEST_CASE("cav") {
  CHECK(cav({0.4, 0.4, 0.4}) == 0.0);
  CHECK(cav({-1, 1, -1, 1}) == doctest::Approx(1.0));
  CHECK(cav({0, 0, 3, 3}) == doctest::Approx(1.5));
  CHECK_THROWS_AS(cav({}), DomainError);
  std::mt19937_64 g(1);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> x(50);
  for (auto& v : x) v = n(g);
  CHECK(std::abs(cav(x) - oracle::pop_std(x)) < 1e-12);
}

TEST_CASE("uniform ring throughput") {
  const double L = 22 / 0.081;
  auto t = uniform_ring(22, L, 5.25, 400);
  const double q = throughput(t, 40, 400);
  const double analytic = 22 * 5.25 * 3600 / L;
  CHECK(analytic == doctest::Approx(1531).epsilon(1e-3));
  CHECK(std::abs(q - analytic) / analytic < 0.02);
  CHECK(throughput(t, 100, 100) == 0.0);
}

TEST_CASE("fuel model properties") {
  FuelModel m;
  CHECK(m.rate(10, -2) == m.rate(10, 0));
  CHECK(m.rate(10, 1) > m.rate(10, 0));
  FuelAccumulator idle(m);
  for (int i = 0; i < 100; ++i) idle.add(0, 0, 0.1);
  CHECK(idle.result().mpg == 0.0);
  FuelModel zero{0, 0, 0, 0};
  FuelAccumulator none(zero);
  none.add(5, 0, 0.1);
  CHECK(none.result().infinite);
}

TEST_CASE("doubling acceleration excursions lowers mpg") {
  // same speed profile endpoints, twice as many +/- 2 m/s^2 pulses
  auto run = [](int period) {
    FuelAccumulator f;
    double v = 10;
    for (int k = 0; k < 6000; ++k) {
      double a = 0;
      const int ph = k % period;
      if (ph < 5) a = 2;
      else if (ph < 10) a = -2;
      v += a * 0.1;
      f.add(v, a, 0.1);
    }
    return f.result().mpg;
  };
  CHECK(run(100) < run(200));
}

TEST_CASE("stability check") {
  Series flat;
  for (int k = 0; k <= 3000; ++k) {
    flat.time.push_back(k * 0.1);
    flat.value.push_back(5.0);
  }
  const auto s = stability_check(flat, 0.2, 60, 0, 300, 0);
  CHECK(s.stable);
  CHECK(s.final_std == 0.0);
  Series wave = flat;
  for (std::size_t k = 0; k < wave.value.size(); ++k) wave.value[k] = 5 + std::sin(wave.time[k]);
  const auto w = stability_check(wave, 0.2, 60, 0, 300, 0);
  CHECK_FALSE(w.stable);
  CHECK(w.final_std == doctest::Approx(std::sqrt(0.5)).epsilon(0.02));
  CHECK_THROWS_AS(stability_check(flat, 0.2, 60, 0, 30, 0), DomainError);
}

TEST_CASE("velocity drop") {
  auto t = uniform_ring(3, 100, 5, 60);
  for (auto& s : t.snapshots) {
    if (s.time > 10 && s.time < 12) s.vehicles[1].velocity = 2;
  }
  CHECK(velocity_drop(t, 1, 10, 30) == doctest::Approx(3.0));
  CHECK(velocity_drop(t, 0, 10, 30) == 0.0);
}

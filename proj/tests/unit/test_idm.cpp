#include <doctest.h>

#include <cmath>
#include <random>

#include "mtc/idm.hpp"
#include "oracles.hpp"

using namespace mtc;

TEST_CASE("desired gap") {
  IdmParams p;
  CHECK(idm_desired_gap(p, 0.0, 7.0) == doctest::Approx(p.s0));
  CHECK(idm_desired_gap(p, 10.0, 10.0) == doctest::Approx(12.0));
  // closing-speed term drives the max to zero
  CHECK(idm_desired_gap(p, 10.0, 15.0) == doctest::Approx(2.0));
}

TEST_CASE("idm acceleration hand values") {
  IdmParams p;
  const double expect = 1.0 - std::pow(10.0 / 30.0, 4) - std::pow(12.0 / 100.0, 2);
  CHECK(idm_accel(p, 10, 100, 10) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(idm_accel(p, 10, 100, 10) == doctest::Approx(0.9733).epsilon(1e-4));
  CHECK(idm_accel(p, 0, p.s0, 0) == doctest::Approx(0.0));
  const double far = idm_accel(p, p.v0, 1e9, p.v0);
  CHECK(far < 0.0);
  CHECK(far > -1e-9);
}

TEST_CASE("idm rejects non-positive gap") {
  IdmParams p;
  CHECK_THROWS_AS(idm_accel(p, 5, 0.0, 5), DomainError);
  CHECK_THROWS_AS(idm_accel(p, 5, -1.0, 5), DomainError);
}

TEST_CASE("idm matches oracle on random states") {
  std::mt19937_64 r(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 2000; ++i) {
    IdmParams p;
    p.a_max = 0.5 + 2 * u(r);
    p.v0 = 10 + 30 * u(r);
    p.delta = 1 + 4 * u(r);
    p.s0 = 3 * u(r);
    p.T = 0.5 + 2 * u(r);
    p.b = 0.5 + 3 * u(r);
    const double v = 30 * u(r), s = 0.1 + 100 * u(r), vl = 30 * u(r);
    CHECK(std::abs(idm_accel(p, v, s, vl) -
                   oracle::idm(p.a_max, p.v0, p.delta, p.s0, p.T, p.b, v, s, vl)) < 1e-9);
  }
}

TEST_CASE("idm monotone in v and s, bounded by a_max") {
  std::mt19937_64 r(11);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 2000; ++i) {
    IdmParams p;
    p.a_max = 0.5 + 2 * u(r);
    p.v0 = 10 + 30 * u(r);
    p.delta = 1 + 4 * u(r);
    p.T = 0.5 + 2 * u(r);
    p.b = 0.5 + 3 * u(r);
    const double v = 30 * u(r), s = 0.5 + 80 * u(r), vl = 30 * u(r);
    const double dv = 0.5 * u(r), ds = 5 * u(r);
    const double a = idm_accel(p, v, s, vl);
    CHECK(idm_accel(p, v + dv, s, vl) <= a + 1e-12);
    CHECK(idm_accel(p, v, s + ds, vl) >= a - 1e-12);
    CHECK(a <= p.a_max);
  }
}

TEST_CASE("noise free model is exact and deterministic") {
  IdmParams p;
  p.noise_sigma = 0.0;
  Rng r1(1), r2(99);
  CHECK(idm_accel_noisy(p, 8, 20, 9, r1) == idm_accel(p, 8, 20, 9));
  CHECK(idm_accel_noisy(p, 8, 20, 9, r2) == idm_accel(p, 8, 20, 9));
}

TEST_CASE("noise moments") {
  IdmParams p;
  Rng r(5);
  const double base = idm_accel(p, 8, 20, 9);
  double m = 0, q = 0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    const double e = idm_accel_noisy(p, 8, 20, 9, r) - base;
    m += e;
    q += e * e;
  }
  m /= n;
  CHECK(std::abs(m) < 0.001);
  CHECK(std::abs(std::sqrt(q / n - m * m) - 0.2) < 0.01);
}

TEST_CASE("equilibrium velocity zeroes the acceleration") {
  IdmParams p;
  for (double gap : {3.0, 6.77, 10.0, 40.0}) {
    const double v = idm_equilibrium_velocity(p, gap);
    CHECK(std::abs(idm_accel(p, v, gap, v)) < 1e-9);
  }
  CHECK_THROWS_AS(idm_equilibrium_velocity(p, 0.0), DomainError);
}

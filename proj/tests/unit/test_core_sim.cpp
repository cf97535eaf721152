#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "mtc/failsafe.hpp"
#include "mtc/trace_io.hpp"
#include "mtc/world.hpp"
#include "oracles.hpp"

using namespace mtc;

TEST_CASE("failsafe leaves distant leaders alone") {
  FailsafeParams p;
  auto r = apply_failsafe(1.0, 1000.0, 10, 10, 0.1, p);
  CHECK(r.accel == 1.0);
  CHECK_FALSE(r.clamped);
}

TEST_CASE("failsafe at minimum gap with both stopped") {
  FailsafeParams p;
  CHECK(apply_failsafe(1.0, p.min_gap, 0, 0, 0.1, p).accel <= 0.0);
}

TEST_CASE("failsafe on a non-positive gap") {
  FailsafeParams p;
  auto r = apply_failsafe(2.0, -0.1, 5, 5, 0.1, p);
  CHECK(r.accel == -p.b_max);
  CHECK(r.invalid_gap);
}

TEST_CASE("failsafe close to a stopped leader") {
  FailsafeParams p;
  const auto r = apply_failsafe(0.0, 2.0, 10, 0, 0.1, p);
  CHECK(r.accel < 0.0);
  CHECK(r.clamped);
}

TEST_CASE("safe acceleration is the tight bound of the braking rollout") {
  FailsafeParams p;
  std::mt19937_64 g(8);
  std::uniform_real_distribution<double> u(0, 1);
  int tested = 0;
  for (int i = 0; i < 3000; ++i) {
    const double gap = 0.6 + 60 * u(g), vf = 25 * u(g), vl = 25 * u(g);
    const double a = safe_acceleration(gap, vf, vl, 0.1, p);
    if (a < -p.b_max || vf + a * 0.1 < 0) continue;  // not reachable by a real command
    ++tested;
    CHECK(oracle::braking_rollout_min_gap(gap, vf, vl, a, p.b_max, 0.1) >= p.min_gap - 1e-7);
    CHECK(oracle::braking_rollout_min_gap(gap, vf, vl, a + 0.05, p.b_max, 0.1) < p.min_gap);
  }
  CHECK(tested > 1000);
}

TEST_CASE("braking travel helpers agree") {
  for (double v : {0.0, 0.3, 0.9, 5.0, 13.4, 29.0}) {
    const double travel = braking_travel(v, 9, 0.1);
    CHECK(max_velocity_for_travel(travel, 9, 0.1) == doctest::Approx(v).epsilon(1e-9));
  }
  CHECK(max_velocity_for_travel(-1.0, 9, 0.1) == 0.0);
}

TEST_CASE("ring geometry") {
  auto sc = RingScenario::from_density(85.0);
  CHECK(sc.ring_length == doctest::Approx(258.82).epsilon(1e-4));
  CHECK(RingScenario::from_density(81.0).ring_length == doctest::Approx(271.6).epsilon(1e-3));
  auto w = World::build_ring(sc, {}, 1);
  REQUIRE(w.vehicles().size() == 22);
  for (const auto& v : w.vehicles()) {
    CHECK(v.velocity == 0.0);
    CHECK(v.gap == doctest::Approx(sc.ring_length / 22 - 5));
  }
  CHECK(w.vehicles()[0].gap == doctest::Approx(6.76).epsilon(1e-3));
}

TEST_CASE("single vehicle follows itself around the ring") {
  RingScenario sc;
  sc.n_vehicles = 1;
  sc.ring_length = 100;
  auto w = World::build_ring(sc, {}, 1);
  CHECK(w.vehicles()[0].leader_id == 0);
  CHECK(w.vehicles()[0].gap == doctest::Approx(95.0));
}

TEST_CASE("over-capacity configurations are rejected") {
  RingScenario sc;
  sc.n_vehicles = 30;
  sc.ring_length = 100;
  CHECK_THROWS_AS(World::build_ring(sc, {}, 1), ConfigError);
  FleetSpec f;
  f.rv_count = 23;
  CHECK_THROWS_AS(World::build_ring(RingScenario::from_density(85), f, 1), ConfigError);
}

TEST_CASE("semi-implicit update") {
  RingScenario sc;
  sc.n_vehicles = 1;
  sc.ring_length = 10000;
  FleetSpec f;
  f.params.idm.noise_sigma = 0;
  auto w = World::build_ring(sc, f, 1);
  const double x0 = w.vehicles()[0].position;
  w.step(0.1);
  const auto& v = w.vehicles()[0];
  CHECK(v.velocity == doctest::Approx(v.acceleration * 0.1));
  CHECK(v.position - x0 == doctest::Approx(v.velocity * 0.1));
}

TEST_CASE("equilibrium ring is a fixed point") {
  auto sc = RingScenario::from_density(85.0);
  FleetSpec f;
  f.params.idm.noise_sigma = 0;
  sc.initial_velocity = ring_equilibrium_velocity(f.params.idm, sc.ring_length, 22);
  auto w = World::build_ring(sc, f, 1);
  const double gap = w.vehicles()[0].gap;
  for (int i = 0; i < 200; ++i) w.step(0.1);
  for (const auto& v : w.vehicles()) {
    CHECK(std::abs(v.acceleration) < 1e-9);
    CHECK(v.velocity == doctest::Approx(sc.initial_velocity).epsilon(1e-9));
    CHECK(v.gap == doctest::Approx(gap).epsilon(1e-9));
  }
}

TEST_CASE("velocity never goes negative") {
  RingScenario sc;
  sc.n_vehicles = 2;
  sc.ring_length = 20;
  auto w = World::build_ring(sc, {}, 3);
  for (int i = 0; i < 500; ++i) {
    w.step(0.1);
    for (const auto& v : w.vehicles()) CHECK(v.velocity >= 0.0);
  }
}

TEST_CASE("perturbation pins velocity for the hold") {
  auto sc = RingScenario::from_density(85.0);
  auto w = World::build_ring(sc, {}, 2);
  for (int i = 0; i < 300; ++i) w.step(0.1);
  CHECK_THROWS_AS(w.inject_perturbation(99, 3, 2, 0.1), ConfigError);
  w.inject_perturbation(5, 3.0, 2.0, 0.1);
  int pinned = 0;
  for (int i = 0; i < 40; ++i) {
    w.step(0.1);
    const auto& v = w.vehicles()[w.index_of(5)];
    if (v.flags & flags::perturbed) ++pinned;
  }
  CHECK(pinned == 20);
}

TEST_CASE("episode trace length and determinism") {
  EpisodeSchedule s;
  s.warmup_steps = 50;
  s.horizon_steps = 150;
  s.measurement_window_s = 10;
  FleetSpec f;
  f.rv_controller = ControllerKind::fs;
  f.rv_count = 1;
  auto a = run_episode(RingScenario::from_density(85), f, s, 4);
  auto b = run_episode(RingScenario::from_density(85), f, s, 4);
  CHECK(a.snapshots.size() == 201);
  std::ostringstream x, y;
  write_trace_csv(a, x);
  write_trace_csv(b, y);
  CHECK(x.str() == y.str());
  CHECK(trace_meta_json(a) == trace_meta_json(b));
  auto c = run_episode(RingScenario::from_density(85), f, s, 5);
  std::ostringstream z;
  write_trace_csv(c, z);
  CHECK(x.str() != z.str());
}

TEST_CASE("ring conserves vehicles and keeps gaps positive") {
  EpisodeSchedule s;
  s.warmup_steps = 300;
  s.horizon_steps = 700;
  s.measurement_window_s = 60;
  s.humanizer_enabled = true;
  for (double dens : {70.0, 110.0, 150.0}) {
    for (auto k : {ControllerKind::idm, ControllerKind::bcm, ControllerKind::lacc,
                   ControllerKind::fs, ControllerKind::piws, ControllerKind::scripted_gap}) {
      FleetSpec f;
      f.rv_controller = k;
      f.rv_count = k == ControllerKind::idm ? 0 : 3;
      f.placement = Placement::dispersed;
      auto t = run_episode(RingScenario::from_density(dens), f, s, 9);
      for (const auto& snap : t.snapshots) {
        REQUIRE(snap.vehicles.size() == 22);
        for (const auto& v : snap.vehicles) REQUIRE(v.gap > 0);
      }
    }
  }
}

TEST_CASE("bottleneck insertion rate and penetration") {
  BottleneckScenario b;
  InflowProcess in(3600, 0.1, 1);
  CHECK(in.arrival_probability(0.1) == doctest::Approx(0.1));
  int rv = 0;
  for (int i = 0; i < 10000; ++i) rv += in.tag_rv();
  CHECK(rv >= 900);
  CHECK(rv <= 1100);
  InflowProcess none(3600, 0.0, 1);
  for (int i = 0; i < 1000; ++i) CHECK_FALSE(none.tag_rv());
}

TEST_CASE("bottleneck counts and safety") {
  BottleneckScenario b;
  FleetSpec f;
  f.rv_controller = ControllerKind::piws;
  f.penetration = 0.1;
  auto w = World::build_bottleneck(b, f, 3);
  w.activate_controllers();
  for (int i = 0; i < 3000; ++i) {
    w.step(0.1);
    REQUIRE(static_cast<long>(w.vehicles().size()) == w.insertions() - w.exits());
    for (const auto& v : w.vehicles()) {
      if (v.leader_id >= 0 && !(v.flags & flags::projected_leader)) REQUIRE(v.gap > 0);
    }
  }
  CHECK(w.exits() > 0);
}

TEST_CASE("active RVs keep to the speed limit") {
  BottleneckScenario b;
  FleetSpec f;
  f.rv_controller = ControllerKind::lacc;
  f.penetration = 0.4;
  auto w = World::build_bottleneck(b, f, 2);
  w.activate_controllers();
  double top = 0;
  for (int i = 0; i < 3000; ++i) {
    w.step(0.1);
    for (const auto& v : w.vehicles()) {
      if (v.is_rv) top = std::max(top, v.velocity);
    }
  }
  CHECK(top <= b.speed_limit + 1e-9);
  CHECK(top > 0.5 * b.speed_limit);
}

TEST_CASE("bottleneck validation") {
  BottleneckScenario b;
  b.segments = {{400, 4}, {300, 8}};
  CHECK_THROWS_AS(b.validate(), ConfigError);
  BottleneckScenario c;
  c.inflow_rate = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("penetration to ring count") {
  CHECK(rv_count_for_penetration(0.05, 22) == 1);
  CHECK(rv_count_for_penetration(0.20, 22) == 4);
  CHECK(rv_count_for_penetration(0.40, 22) == 9);
}

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mtc/experiment.hpp"
#include "mtc/trace_io.hpp"

using namespace mtc;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

fs::path scratch_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("mtc_unit_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.controller = ControllerKind::fs;
  c.rv_count = 1;
  c.schedule.warmup_steps = 200;
  c.schedule.horizon_steps = 800;
  c.schedule.measurement_window_s = 60;
  c.seeds = {1, 2};
  return c;
}

}  // namespace

TEST_CASE("config parsing") {
  const auto j = nlohmann::json::parse(R"({
    "name": "t", "scenario": "ring",
    "ring": {"density_veh_km": 81},
    "fleet": {"controller": "piws", "penetration": 0.2, "placement": "dispersed"},
    "schedule": {"horizon_steps": 1000, "warmup_steps": 200, "measurement_window_s": 60},
    "seeds": [3, 4]
  })");
  const auto c = parse_experiment_config(j);
  CHECK(c.controller == ControllerKind::piws);
  CHECK(c.resolved_rv_count() == 4);
  CHECK(c.placement == Placement::dispersed);
  CHECK(c.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK(std::get<RingScenario>(c.scenario).density_veh_per_km() == doctest::Approx(81));
  const auto back = parse_experiment_config(nlohmann::json::parse(experiment_config_to_json(c).dump()));
  CHECK(experiment_config_to_json(back) == experiment_config_to_json(c));
}

TEST_CASE("config errors name the field") {
  auto bad = [](const char* text) {
    try {
      parse_experiment_config(nlohmann::json::parse(text)).validate();
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(bad(R"({"fleet": {"controller": "fs", "penetration": 1.5}})").find("penetration") !=
        std::string::npos);
  CHECK(bad(R"({"fleet": {"controller": "warp"}})").find("warp") != std::string::npos);
  CHECK(bad(R"({"fleet": {"controller": "policy"}})").find("policy") != std::string::npos);
  CHECK_FALSE(bad(R"({"seeds": []})").empty());
  CHECK_THROWS_AS(load_experiment_config("/nonexistent/cfg.json"), IoError);
}

TEST_CASE("aggregate is the mean of seeds") {
  MetricsReport a, b;
  a.ttc_worst = 3;
  b.ttc_worst = 5;
  a.drac_worst = 1;
  b.drac_worst = 2;
  a.war = 0.5;
  a.stable = b.stable = true;
  a.time_to_stabilize = 100;
  b.time_to_stabilize = 200;
  const auto g = aggregate({a, b});
  CHECK(g.n == 2);
  CHECK(g.ttc_worst == 4);
  CHECK(g.drac_worst == 1.5);
  CHECK(g.war == 0.5);
  CHECK(g.war_count == 1);
  CHECK(g.stable_fraction == 1.0);
  CHECK(g.time_to_stabilize == 150);
}

TEST_CASE("experiments write reproducible outputs") {
  auto c = small_config();
  const auto d1 = scratch_dir("exp1"), d2 = scratch_dir("exp2");
  c.out_dir = d1.string();
  c.write_traces = true;
  const auto r = run_experiment(c);
  c.out_dir = d2.string();
  run_experiment(c);
  REQUIRE(r.per_seed.size() == 2);
  // config.json records out_dir, so it is checked separately
  for (const char* f : {"aggregate.json", "metrics.csv", "seed_1.json",
                        "seed_2.json", "trace_seed_1.csv", "trace_seed_1.meta.json"}) {
    INFO(f);
    REQUIRE(fs::exists(d1 / f));
    CHECK(slurp(d1 / f) == slurp(d2 / f));
  }
  // aggregate recomputed from the per-seed reports
  std::vector<MetricsReport> rs;
  for (const auto& s : r.per_seed) rs.push_back(s.report);
  CHECK(aggregate_to_json(aggregate(rs)) + "\n" == slurp(d1 / "aggregate.json"));
  auto j1 = nlohmann::json::parse(slurp(d1 / "config.json"));
  auto j2 = nlohmann::json::parse(slurp(d2 / "config.json"));
  j1.erase("out_dir");
  j2.erase("out_dir");
  CHECK(j1 == j2);
}

TEST_CASE("trace csv round trip") {
  auto c = small_config();
  c.seeds = {1};
  const auto d = scratch_dir("trace");
  c.out_dir = d.string();
  c.write_traces = true;
  run_experiment(c);
  const auto t = read_trace((d / "trace_seed_1.csv").string());
  EpisodeSchedule s = c.schedule;
  FleetSpec f = make_fleet(c);
  const auto ref = run_episode(c.scenario, f, s, 1);
  REQUIRE(t.snapshots.size() == ref.snapshots.size());
  const auto& a = t.snapshots.back().vehicles;
  const auto& b = ref.snapshots.back().vehicles;
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].position == doctest::Approx(b[i].position).epsilon(1e-8));
    CHECK(a[i].leader_id == b[i].leader_id);
    CHECK(a[i].is_rv == b[i].is_rv);
  }
  CHECK_THROWS_AS(read_trace((d / "missing.csv").string()), IoError);
}

TEST_CASE("perturbation outputs") {
  auto c = small_config();
  c.seeds = {1};
  c.schedule.horizon_steps = 1200;
  const auto d = scratch_dir("perturb");
  c.out_dir = d.string();
  const auto res = run_perturbation_test(c);
  REQUIRE(res.size() == 1);
  CHECK(res[0].target_id >= 0);
  CHECK(res[0].follower_id >= 0);
  std::ifstream f(d / "velocity_seed_1.csv");
  std::string header, row;
  std::getline(f, header);
  std::getline(f, row);
  const auto cols = std::count(header.begin(), header.end(), ',') + 1;
  CHECK(cols == 23);
  CHECK(row.rfind("0", 0) == 0);
  std::getline(f, row);
  CHECK(row.rfind("0.1,", 0) == 0);
}

TEST_CASE("sweeps") {
  auto c = small_config();
  c.seeds = {1};
  c.out_dir = scratch_dir("sweep").string();
  const auto cells = sweep(c, SweepAxis::penetration, {"0.05", "0.2", "0.4"}, 2);
  REQUIRE(cells.size() == 3);
  CHECK(cells[0].rv_count == 1);
  CHECK(cells[1].rv_count == 4);
  CHECK(cells[2].rv_count == 9);
  const auto dens = sweep(c, SweepAxis::density, {"70", "85", "100", "150"}, 1, false);
  CHECK(dens.size() == 4);
  for (const auto& cell : dens) CHECK(cell.ok);
  const auto bad = sweep(c, SweepAxis::controller, {"fs", "warp"}, 1, false);
  CHECK(bad[0].ok);
  CHECK_FALSE(bad[1].ok);
  CHECK_THROWS_AS(sweep(c, SweepAxis::density, {}, 1, false), ConfigError);
  CHECK_THROWS_AS(parse_sweep_axis("colour"), ConfigError);
}

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtc/humanizer.hpp"
#include "mtc/metrics.hpp"
#include "mtc/world.hpp"

namespace mtc {

struct ExperimentConfig {
  std::string name = "experiment";
  Scenario scenario = RingScenario::from_density(85.0);
  ControllerKind controller = ControllerKind::idm;
  std::optional<int> rv_count;  // ring; default from penetration
  double penetration = 0.0;
  Placement placement = Placement::platooned;
  ControllerSet params;
  std::string policy_path;  // required for the policy controller
  std::string csc_path;     // optional stage forecaster for the policy
  EpisodeSchedule schedule;
  std::string humanizer_histogram;  // empty: built-in default
  MetricsOptions metrics;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::string out_dir = "out";
  bool write_traces = false;
  int workers = 1;

  bool is_ring() const { return std::holds_alternative<RingScenario>(scenario); }
  int resolved_rv_count() const;
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);
nlohmann::ordered_json experiment_config_to_json(const ExperimentConfig& c);

/// Fleet with factories for model-backed controllers.
FleetSpec make_fleet(const ExperimentConfig& c);
/// Histogram the humanizer draws from.
AccelEventModel humanizer_model(const ExperimentConfig& c);

struct SeedResult {
  std::uint64_t seed = 0;
  MetricsReport report;
};

struct AggregateReport {
  int n = 0;
  double ttc_worst = 0.0;
  double drac_worst = 0.0;
  double fuel_economy = 0.0;
  double throughput = 0.0;
  double cav = 0.0;
  double war = 0.0;  // over seeds with a defined WAR
  double war_literal = 0.0;
  int war_count = 0;
  double stable_fraction = 0.0;
  double time_to_stabilize = 0.0;  // over stable seeds
  double mean_velocity = 0.0;
};

AggregateReport aggregate(const std::vector<MetricsReport>& reports);
std::string aggregate_to_json(const AggregateReport& a);
std::string aggregate_csv_header();
std::string aggregate_csv_row(const AggregateReport& a);

struct ExperimentResult {
  std::vector<SeedResult> per_seed;
  AggregateReport aggregate;
};

/// Runs every seed; writes config.json, seed_<s>.json, metrics.csv and
/// aggregate.json (plus traces when asked) under out_dir. A failing seed
/// aborts with an error that names it.
ExperimentResult run_experiment(const ExperimentConfig& c, bool write_outputs = true);

/// Perturbation start used when the config has none: before the ring
/// destabilises for all-IDM, late in the horizon otherwise.
double default_perturbation_start(const ExperimentConfig& c);

struct PerturbationResult {
  std::uint64_t seed = 0;
  MetricsReport report;
  int target_id = -1;
  int follower_id = -1;
  std::vector<std::string> warnings;
};

/// Standard perturbation on every seed; writes war_seed_<s>.json and
/// velocity_seed_<s>.csv (one column per vehicle, one row per step).
std::vector<PerturbationResult> run_perturbation_test(const ExperimentConfig& c,
                                                      bool write_outputs = true);

/// Per-vehicle velocity table of a stride-1 trace.
std::string velocity_table_csv(const Trace& trace);

enum class SweepAxis { density, penetration, controller };
SweepAxis parse_sweep_axis(const std::string& s);

struct SweepCell {
  std::string value;
  int rv_count = 0;
  bool ok = false;
  std::string error;
  AggregateReport aggregate;
};

/// One experiment per value (shared seeds), up to `workers` at a time.
/// Cell failures are recorded and the sweep continues. Writes sweep.csv.
std::vector<SweepCell> sweep(const ExperimentConfig& base, SweepAxis axis,
                             const std::vector<std::string>& values, int workers,
                             bool write_outputs = true);

}  // namespace mtc

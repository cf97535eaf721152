#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mtc/common.hpp"
#include "mtc/controllers.hpp"
#include "mtc/failsafe.hpp"
#include "mtc/humanizer.hpp"
#include "mtc/idm.hpp"
#include "mtc/zone.hpp"

namespace mtc {

// ---------------------------------------------------------------------------
// Scenario geometry and fleet
// ---------------------------------------------------------------------------

struct RingScenario {
  double ring_length = 22.0 / 0.085;
  int n_vehicles = 22;
  double speed_limit = 30.0 * kMph;
  double vehicle_length = 5.0;
  double initial_velocity = 0.0;  // uniform start speed [m/s]

  static RingScenario from_density(double veh_per_km, int n_vehicles = 22);
  double density_veh_per_km() const { return 1000.0 * n_vehicles / ring_length; }
  void validate() const;
};

struct Segment {
  double length = 0.0;
  int lanes = 1;
};

struct BottleneckScenario {
  std::vector<Segment> segments{{400.0, 8}, {300.0, 4}, {300.0, 2}};
  double inflow_rate = 3600.0;  // [veh/hr]
  double speed_limit = 30.0;
  double vehicle_length = 5.0;
  double merge_zone = 100.0;      // approach length before a lane drop [m]
  double insertion_speed = 10.0;  // [m/s], reduced when the entry is crowded
  double insertion_min_gap = 5.0;  // [m]

  double total_length() const;
  void validate() const;
};

using Scenario = std::variant<RingScenario, BottleneckScenario>;

enum class Placement { platooned, dispersed };

/// Parameter blocks for every longitudinal model.
struct ControllerSet {
  IdmParams idm;
  BcmParams bcm;
  LaccParams lacc;
  FsParams fs;
  PiwsParams piws;
  ScriptedGapParams scripted_gap;
  FailsafeParams failsafe;
};

using ControllerFactory = std::function<std::unique_ptr<Controller>(int vehicle_id)>;

struct FleetSpec {
  ControllerKind rv_controller = ControllerKind::idm;
  int rv_count = 0;            // ring
  Placement placement = Placement::platooned;
  double penetration = 0.0;    // bottleneck insertions tagged RV with this probability
  ControllerSet params;
  /// Required for policy/external controllers; optional override otherwise.
  ControllerFactory factory;
};

/// RV count for a penetration rate on an n-vehicle ring (nearest integer).
int rv_count_for_penetration(double penetration, int n_vehicles);

// ---------------------------------------------------------------------------
// Vehicle state and trace records
// ---------------------------------------------------------------------------

namespace flags {
inline constexpr std::uint32_t perturbed = 1u << 0;
inline constexpr std::uint32_t humanizer = 1u << 1;
inline constexpr std::uint32_t failsafe = 1u << 2;
inline constexpr std::uint32_t merged = 1u << 3;
inline constexpr std::uint32_t rv_active = 1u << 4;
inline constexpr std::uint32_t yielding = 1u << 5;
inline constexpr std::uint32_t invalid_gap = 1u << 6;
inline constexpr std::uint32_t robot = 1u << 7;  // set on RVs in serialized traces
inline constexpr std::uint32_t projected_leader = 1u << 8;  // leader is past a lane drop
}  // namespace flags

inline constexpr double kNoGap = std::numeric_limits<double>::infinity();

struct VehicleState {
  int id = 0;
  int lane = 0;
  double position = 0.0;      // front bumper [m]; ring: in [0, L)
  double velocity = 0.0;      // [m/s], never negative
  double acceleration = 0.0;  // realised over the last step [m/s^2]
  double length = 5.0;
  ControllerKind controller = ControllerKind::idm;
  bool is_rv = false;
  std::uint32_t flags = 0;
  // Derived each step from the geometry.
  int leader_id = -1;
  double gap = kNoGap;  // bumper gap to the leader (projected across a lane drop)
};

struct EventRecord {
  int step = 0;
  double time = 0.0;
  int vehicle_id = -1;
  std::string kind;
  double value = 0.0;
};

struct Neighbor {
  int index = -1;
  double gap = kNoGap;
  double velocity = 0.0;
};

/// Bernoulli arrivals at rate*dt/3600 per step, each tagged RV with
/// probability `penetration`. Arrival and tag draws use separate streams.
class InflowProcess {
 public:
  InflowProcess(double rate_veh_per_hr, double penetration, std::uint64_t seed);
  double arrival_probability(double dt) const;
  bool arrival(double dt);
  bool tag_rv();

 private:
  double rate_;
  double penetration_;
  Rng arrival_rng_;
  Rng tag_rng_;
};

// ---------------------------------------------------------------------------
// World
// ---------------------------------------------------------------------------

class World {
 public:
  /// Uniformly spaced ring at rest. Throws ConfigError on invalid input.
  static World build_ring(const RingScenario& config, const FleetSpec& fleet,
                          std::uint64_t seed);
  /// Empty lane-drop corridor with a seeded Bernoulli inflow.
  static World build_bottleneck(const BottleneckScenario& config, const FleetSpec& fleet,
                                std::uint64_t seed);

  World(World&&) noexcept;
  World& operator=(World&&) noexcept;
  ~World();

  /// One synchronous update. Throws SimulationError on overlap.
  void step(double dt);

  /// RVs switch from IDM driving to their own controller.
  void activate_controllers();
  bool controllers_active() const { return controllers_active_; }

  /// Human vehicles draw events from `model` on [start, end).
  void enable_humanizer(const AccelEventModel& model, double start_time, double end_time);

  /// Pins the target's command to `hold_velocity` for round(duration/dt) steps.
  /// Throws ConfigError when the id is not in the network.
  void inject_perturbation(int vehicle_id, double hold_velocity, double duration_s,
                           double dt);

  double time() const { return time_; }
  int step_count() const { return step_; }
  bool is_ring() const { return ring_.has_value(); }
  double ring_length() const;
  double speed_limit() const;
  const std::vector<VehicleState>& vehicles() const { return vehicles_; }
  /// Index into vehicles() or -1.
  int index_of(int vehicle_id) const;
  std::optional<Neighbor> leader(int index) const;
  std::optional<Neighbor> follower(int index) const;
  SensingZoneSnapshot sensing_zone(int index, double zone_length) const;
  double mean_velocity() const;
  /// Front RV of the platoon (the RV whose leader is a human vehicle), or -1.
  int lead_rv_index() const;
  Controller* controller(int index);

  const std::vector<EventRecord>& events() const { return events_; }
  long insertions() const { return insertions_; }
  long exits() const { return exits_; }
  long pending_insertions() const { return pending_; }
  const FleetSpec& fleet() const { return fleet_; }
  std::uint64_t seed() const { return seed_; }

 private:
  struct Agent;
  struct Obstacle {
    double gap = kNoGap;
    double velocity = 0.0;
    double length = 0.0;
  };

  World();
  void add_vehicle(VehicleState v, bool rv);
  void refresh_neighbors();
  void refresh_ring();
  void refresh_bottleneck();
  void check_no_overlap() const;
  double command_for(int i, double dt, std::vector<Obstacle>& obstacles);
  void bottleneck_transitions(double dt);
  void bottleneck_inflow(double dt);
  int segment_of(double x) const;
  int map_lane(int segment, int lane) const;
  void log(int vehicle_id, std::string kind, double value = 0.0);

  std::optional<RingScenario> ring_;
  std::optional<BottleneckScenario> bottleneck_;
  std::vector<double> segment_start_;
  FleetSpec fleet_;
  std::uint64_t seed_ = 0;
  double time_ = 0.0;
  double dt_ = 0.1;
  int step_ = 0;
  bool controllers_active_ = false;
  std::vector<VehicleState> vehicles_;
  std::vector<std::unique_ptr<Agent>> agents_;
  std::vector<EventRecord> events_;
  // Neighbor cache for the current state.
  std::vector<int> leader_idx_;
  std::vector<int> follower_idx_;
  std::vector<char> cross_leader_;  // leader sits past a lane drop not yet taken
  std::vector<char> must_yield_;    // sibling lane has the merge right of way
  std::vector<std::vector<std::vector<int>>> lane_order_;  // [segment][lane] -> indices
  // Humanizer.
  std::optional<AccelEventModel> humanizer_;
  double humanizer_start_ = 0.0;
  double humanizer_end_ = 0.0;
  std::optional<InflowProcess> inflow_;
  long pending_ = 0;
  long insertions_ = 0;
  long exits_ = 0;
  int next_id_ = 0;
  int next_lane_ = 0;
};

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

struct PerturbationSpec {
  int target_id = -1;  // -1: HV leading the lead RV, or a seeded-random HV
  double start_s = 80.0;
  double hold_velocity = 3.0;
  double duration_s = 2.0;
};

/// Steps run as warmup (RVs drive as IDM) followed by the horizon; the trace
/// covers both, snapshot 0 being the initial state.
struct EpisodeSchedule {
  double dt = 0.1;
  int horizon_steps = 6000;
  int warmup_steps = 2500;
  std::optional<PerturbationSpec> perturbation;
  double measurement_window_s = 360.0;
  bool humanizer_enabled = false;
  double humanizer_start_s = -1.0;  // < 0: at RV activation
  int record_stride = 1;

  int total_steps() const { return warmup_steps + horizon_steps; }
  double activation_time() const { return warmup_steps * dt; }
  double end_time() const { return total_steps() * dt; }
  /// Last `measurement_window_s` seconds of the horizon.
  double measurement_start() const { return end_time() - measurement_window_s; }
  void validate() const;
};

struct Snapshot {
  int step = 0;
  double time = 0.0;
  std::vector<VehicleState> vehicles;
};

struct TraceMeta {
  std::string scenario;  // "ring" | "bottleneck"
  double ring_length = 0.0;
  double road_length = 0.0;
  double speed_limit = 0.0;
  double dt = 0.1;
  int warmup_steps = 0;
  int horizon_steps = 0;
  int record_stride = 1;
  std::uint64_t seed = 0;
  int perturbation_target = -1;
  double perturbation_start = -1.0;
  long insertions = 0;
  long exits = 0;
};

struct Trace {
  TraceMeta meta;
  std::vector<Snapshot> snapshots;
  std::vector<EventRecord> events;
};

using StepHook = std::function<void(World&)>;

/// Full episode. `humanizer` defaults to the built-in histogram when the
/// schedule enables it. `on_step` runs after every step (may be empty).
Trace run_episode(const Scenario& scenario, const FleetSpec& fleet,
                  const EpisodeSchedule& schedule, std::uint64_t seed,
                  const AccelEventModel* humanizer = nullptr,
                  const StepHook& on_step = {});

/// Perturbation target per the schedule: explicit id, the HV ahead of the
/// lead RV, or a seeded-random HV when there are no RVs.
int choose_perturbation_target(const World& world, const PerturbationSpec& spec);

}  // namespace mtc

#include "mtc/world.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mtc {

// ---------------------------------------------------------------------------
// Scenario validation
// ---------------------------------------------------------------------------

RingScenario RingScenario::from_density(double veh_per_km, int n_vehicles) {
  if (!(veh_per_km > 0)) throw ConfigError("ring density must be positive");
  RingScenario r;
  r.n_vehicles = n_vehicles;
  r.ring_length = 1000.0 * n_vehicles / veh_per_km;
  return r;
}

void RingScenario::validate() const {
  if (n_vehicles < 1) throw ConfigError("ring: need at least one vehicle");
  if (!(vehicle_length > 0)) throw ConfigError("ring: vehicle length must be positive");
  if (!(n_vehicles * vehicle_length < ring_length)) {
    std::ostringstream msg;
    msg << "ring: " << n_vehicles << " vehicles of " << vehicle_length
        << " m do not fit on a " << ring_length << " m ring";
    throw ConfigError(msg.str());
  }
  if (!(speed_limit > 0)) throw ConfigError("ring: speed limit must be positive");
  if (!(initial_velocity >= 0)) throw ConfigError("ring: initial velocity must be >= 0");
}

double BottleneckScenario::total_length() const {
  double total = 0.0;
  for (const auto& s : segments) total += s.length;
  return total;
}

void BottleneckScenario::validate() const {
  if (segments.empty()) throw ConfigError("bottleneck: no segments");
  for (std::size_t k = 0; k < segments.size(); ++k) {
    if (segments[k].lanes < 1) throw ConfigError("bottleneck: lane count must be >= 1");
    if (k > 0 && segments[k].lanes > segments[k - 1].lanes) {
      throw ConfigError("bottleneck: lane counts must be non-increasing");
    }
    const bool drops = k + 1 < segments.size() && segments[k + 1].lanes < segments[k].lanes;
    if (!(segments[k].length > (drops ? merge_zone : 0.0))) {
      throw ConfigError("bottleneck: segment " + std::to_string(k) +
                        " must be longer than the merge zone");
    }
  }
  if (!(inflow_rate > 0)) throw ConfigError("bottleneck: inflow rate must be positive");
  if (!(vehicle_length > 0)) throw ConfigError("bottleneck: vehicle length must be positive");
  if (!(insertion_speed >= 0)) throw ConfigError("bottleneck: insertion speed must be >= 0");
}

int rv_count_for_penetration(double penetration, int n_vehicles) {
  if (!(penetration >= 0 && penetration <= 1)) {
    throw ConfigError("penetration must be within [0, 1]");
  }
  return static_cast<int>(std::lround(penetration * n_vehicles));
}

void EpisodeSchedule::validate() const {
  if (!(dt > 0)) throw ConfigError("schedule: dt must be positive");
  if (horizon_steps < 1) throw ConfigError("schedule: horizon must be >= 1 step");
  if (warmup_steps < 0) throw ConfigError("schedule: warmup must be >= 0");
  if (!(warmup_steps < horizon_steps)) {
    throw ConfigError("schedule: warmup_steps must be below horizon_steps");
  }
  if (record_stride < 1) throw ConfigError("schedule: record_stride must be >= 1");
  if (!(measurement_window_s > 0 && measurement_window_s <= horizon_steps * dt + 1e-9)) {
    throw ConfigError("schedule: measurement window must fit inside the horizon");
  }
  if (perturbation) {
    if (!(perturbation->duration_s > 0)) throw ConfigError("perturbation: duration must be > 0");
    if (!(perturbation->hold_velocity >= 0)) {
      throw ConfigError("perturbation: hold velocity must be >= 0");
    }
    if (!(perturbation->start_s >= 0 && perturbation->start_s < end_time())) {
      throw ConfigError("perturbation: start must fall inside the episode");
    }
  }
}

InflowProcess::InflowProcess(double rate_veh_per_hr, double penetration, std::uint64_t seed)
    : rate_(rate_veh_per_hr),
      penetration_(penetration),
      arrival_rng_(make_rng(seed, stream::inflow, 0)),
      tag_rng_(make_rng(seed, stream::inflow, 1)) {
  if (!(rate_ >= 0)) throw ConfigError("inflow rate must be >= 0");
  if (!(penetration_ >= 0 && penetration_ <= 1)) {
    throw ConfigError("penetration must be within [0, 1]");
  }
}

double InflowProcess::arrival_probability(double dt) const {
  return std::min(1.0, rate_ * dt / 3600.0);
}

bool InflowProcess::arrival(double dt) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(arrival_rng_) <
         arrival_probability(dt);
}

bool InflowProcess::tag_rv() {
  return std::uniform_real_distribution<double>(0.0, 1.0)(tag_rng_) < penetration_;
}

// ---------------------------------------------------------------------------
// World internals
// ---------------------------------------------------------------------------

struct World::Agent {
  std::unique_ptr<Controller> rv;
  IdmController idm;
  Rng rng;
  std::vector<AccelEvent> events;
  std::size_t next_event = 0;
  bool clamp_logged = false;
  std::size_t logged_events = 0;
  int segment = 0;
  int hold_steps = 0;
  double hold_velocity = 0.0;

  Agent(const IdmParams& p, Rng r) : idm(p), rng(std::move(r)) {}

  const AccelEvent* active_event(double t) {
    while (next_event < events.size() &&
           t >= events[next_event].start_time + events[next_event].duration) {
      ++next_event;
      clamp_logged = false;
    }
    if (next_event < events.size() && events[next_event].active_at(t)) {
      return &events[next_event];
    }
    return nullptr;
  }
};

World::World() = default;
World::World(World&&) noexcept = default;
World& World::operator=(World&&) noexcept = default;
World::~World() = default;

namespace {

// The failsafe parks vehicles exactly on the feasibility edge; allow rounding.
bool can_stop(double gap, double v, double v_lead, double dt, const FailsafeParams& p) {
  return gap > 0 && safe_acceleration(gap, v, v_lead, dt, p) >= -p.b_max - 1e-6;
}

std::unique_ptr<Controller> make_controller(const FleetSpec& fleet, int id) {
  if (fleet.factory) return fleet.factory(id);
  const auto& p = fleet.params;
  switch (fleet.rv_controller) {
    case ControllerKind::idm: return std::make_unique<IdmController>(p.idm);
    case ControllerKind::bcm: return std::make_unique<BcmController>(p.bcm);
    case ControllerKind::lacc: return std::make_unique<LaccController>(p.lacc);
    case ControllerKind::fs: return std::make_unique<FsController>(p.fs);
    case ControllerKind::piws: return std::make_unique<PiwsController>(p.piws);
    case ControllerKind::scripted_gap:
      return std::make_unique<ScriptedGapController>(p.scripted_gap);
    case ControllerKind::policy:
    case ControllerKind::external:
      throw ConfigError(to_string(fleet.rv_controller) + " controller requires a factory");
  }
  throw ConfigError("unknown controller kind");
}

void validate_params(const ControllerSet& p) {
  p.idm.validate();
  p.bcm.validate();
  p.lacc.validate();
  p.fs.validate();
  p.piws.validate();
  p.scripted_gap.validate();
  if (!(p.failsafe.b_max > 0)) throw ConfigError("failsafe: b_max must be positive");
  if (!(p.failsafe.min_gap >= 0)) throw ConfigError("failsafe: min_gap must be >= 0");
}

double positive_mod(double x, double m) {
  double r = std::fmod(x, m);
  if (r < 0) r += m;
  return r;
}

}  // namespace

void World::add_vehicle(VehicleState v, bool rv) {
  v.is_rv = rv;
  v.controller = rv ? fleet_.rv_controller : ControllerKind::idm;
  auto agent = std::make_unique<Agent>(fleet_.params.idm,
                                       make_rng(seed_, stream::idm_noise, v.id));
  if (rv) agent->rv = make_controller(fleet_, v.id);
  if (humanizer_ && !rv) {
    Rng r = make_rng(seed_, stream::humanizer, v.id);
    agent->events =
        schedule_events(*humanizer_, v.id, std::max(humanizer_start_, time_), humanizer_end_, r);
  }
  vehicles_.push_back(v);
  agents_.push_back(std::move(agent));
}

World World::build_ring(const RingScenario& config, const FleetSpec& fleet,
                        std::uint64_t seed) {
  config.validate();
  if (fleet.rv_count < 0 || fleet.rv_count > config.n_vehicles) {
    throw ConfigError("ring: fleet has " + std::to_string(fleet.rv_count) +
                      " RVs for " + std::to_string(config.n_vehicles) + " vehicles");
  }
  World w;
  w.ring_ = config;
  w.fleet_ = fleet;
  w.seed_ = seed;
  auto& p = w.fleet_.params;
  validate_params(p);
  const double v_eq = ring_equilibrium_velocity(p.idm, config.ring_length, config.n_vehicles,
                                                config.vehicle_length);
  if (p.fs.U <= 0) p.fs.U = v_eq * p.fs.u_scale;
  if (p.bcm.v_des <= 0) p.bcm.v_des = v_eq;

  const int n = config.n_vehicles;
  const int k = fleet.rv_count;
  std::vector<bool> is_rv(n, false);
  for (int r = 0; r < k; ++r) {
    const int id = fleet.placement == Placement::platooned ? r : (r * n) / k;
    is_rv[id] = true;
  }
  const double spacing = config.ring_length / n;
  for (int i = 0; i < n; ++i) {
    VehicleState v;
    v.id = i;
    v.position = i * spacing;
    v.velocity = config.initial_velocity;
    v.length = config.vehicle_length;
    w.add_vehicle(v, is_rv[i]);
  }
  w.next_id_ = n;
  w.refresh_neighbors();
  w.check_no_overlap();
  return w;
}

World World::build_bottleneck(const BottleneckScenario& config, const FleetSpec& fleet,
                              std::uint64_t seed) {
  config.validate();
  if (!(fleet.penetration >= 0 && fleet.penetration <= 1)) {
    throw ConfigError("bottleneck: penetration must be within [0, 1]");
  }
  World w;
  w.bottleneck_ = config;
  w.fleet_ = fleet;
  w.seed_ = seed;
  auto& p = w.fleet_.params;
  validate_params(p);
  if (p.fs.U <= 0) p.fs.U = 0.5 * config.speed_limit * p.fs.u_scale;
  if (p.bcm.v_des <= 0) p.bcm.v_des = 0.5 * config.speed_limit;
  double x = 0.0;
  for (const auto& s : config.segments) {
    w.segment_start_.push_back(x);
    x += s.length;
  }
  w.inflow_.emplace(config.inflow_rate, fleet.penetration, seed);
  w.refresh_neighbors();
  return w;
}

double World::ring_length() const { return ring_ ? ring_->ring_length : 0.0; }

int World::index_of(int vehicle_id) const {
  // vehicles_ is sorted by id (insertion order, removals keep order).
  auto it = std::lower_bound(vehicles_.begin(), vehicles_.end(), vehicle_id,
                             [](const VehicleState& v, int id) { return v.id < id; });
  if (it == vehicles_.end() || it->id != vehicle_id) return -1;
  return static_cast<int>(it - vehicles_.begin());
}

Controller* World::controller(int index) { return agents_.at(index)->rv.get(); }

void World::log(int vehicle_id, std::string kind, double value) {
  events_.push_back({step_, time_, vehicle_id, std::move(kind), value});
}

double World::mean_velocity() const {
  if (vehicles_.empty()) return 0.0;
  double s = 0.0;
  for (const auto& v : vehicles_) s += v.velocity;
  return s / static_cast<double>(vehicles_.size());
}

int World::lead_rv_index() const {
  for (std::size_t i = 0; i < vehicles_.size(); ++i) {
    if (!vehicles_[i].is_rv) continue;
    const int l = leader_idx_[i];
    if (l >= 0 && !vehicles_[l].is_rv) return static_cast<int>(i);
  }
  return -1;
}

std::optional<Neighbor> World::leader(int index) const {
  const int l = leader_idx_.at(index);
  if (l < 0) return std::nullopt;
  return Neighbor{l, vehicles_[index].gap, vehicles_[l].velocity};
}

std::optional<Neighbor> World::follower(int index) const {
  const int f = follower_idx_.at(index);
  if (f < 0) return std::nullopt;
  return Neighbor{f, vehicles_[f].gap, vehicles_[f].velocity};
}

SensingZoneSnapshot World::sensing_zone(int index, double zone_length) const {
  SensingZoneSnapshot z;
  z.zone_length = zone_length;
  const auto& self = vehicles_.at(index);
  double rel = 0.0;
  int cur = index;
  for (std::size_t hops = 0; hops + 1 < vehicles_.size() || (hops == 0 && !is_ring()); ++hops) {
    const int l = leader_idx_[cur];
    if (l < 0 || l == index) break;
    rel += vehicles_[cur].gap + vehicles_[l].length;
    if (rel > zone_length) break;
    z.entries.push_back({rel, vehicles_[l].velocity - self.velocity});
    cur = l;
  }
  return z;
}

int World::segment_of(double x) const {
  const int n = static_cast<int>(segment_start_.size());
  for (int k = n - 1; k > 0; --k) {
    if (x >= segment_start_[k]) return k;
  }
  return 0;
}

int World::map_lane(int segment, int lane) const {
  const auto& segs = bottleneck_->segments;
  return lane * segs[segment + 1].lanes / segs[segment].lanes;
}

// ---------------------------------------------------------------------------
// Neighbors
// ---------------------------------------------------------------------------

void World::refresh_neighbors() {
  const std::size_t n = vehicles_.size();
  leader_idx_.assign(n, -1);
  follower_idx_.assign(n, -1);
  cross_leader_.assign(n, 0);
  must_yield_.assign(n, 0);
  for (auto& v : vehicles_) {
    v.flags &= ~flags::projected_leader;
    v.leader_id = -1;
    v.gap = kNoGap;
  }
  if (ring_) {
    if (n > 0) refresh_ring();
  } else {
    refresh_bottleneck();
  }
}

void World::refresh_ring() {
  const int n = static_cast<int>(vehicles_.size());
  const double L = ring_->ring_length;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (vehicles_[a].position != vehicles_[b].position) {
      return vehicles_[a].position < vehicles_[b].position;
    }
    return vehicles_[a].id < vehicles_[b].id;
  });
  for (int k = 0; k < n; ++k) {
    const int i = order[k];
    const int l = order[(k + 1) % n];
    leader_idx_[i] = l;
    follower_idx_[l] = i;
    auto& v = vehicles_[i];
    v.leader_id = vehicles_[l].id;
    if (n == 1) {
      v.gap = L - v.length;
    } else {
      v.gap = positive_mod(vehicles_[l].position - v.position, L) - vehicles_[l].length;
    }
  }
}

void World::refresh_bottleneck() {
  const auto& segs = bottleneck_->segments;
  const int nseg = static_cast<int>(segs.size());
  lane_order_.assign(nseg, {});
  for (int k = 0; k < nseg; ++k) lane_order_[k].assign(segs[k].lanes, {});
  const int n = static_cast<int>(vehicles_.size());
  std::vector<int> seg(n);
  std::vector<int> slot(n);
  for (int i = 0; i < n; ++i) {
    seg[i] = segment_of(vehicles_[i].position);
    lane_order_[seg[i]][vehicles_[i].lane].push_back(i);
  }
  for (auto& lanes : lane_order_) {
    for (auto& lane : lanes) {
      std::sort(lane.begin(), lane.end(), [&](int a, int b) {
        if (vehicles_[a].position != vehicles_[b].position) {
          return vehicles_[a].position < vehicles_[b].position;
        }
        return vehicles_[a].id > vehicles_[b].id;  // older vehicle is ahead
      });
      for (std::size_t s = 0; s < lane.size(); ++s) slot[lane[s]] = static_cast<int>(s);
    }
  }
  const double zone = bottleneck_->merge_zone;
  for (int i = 0; i < n; ++i) {
    const int k = seg[i];
    const int j = vehicles_[i].lane;
    const auto& own = lane_order_[k][j];
    auto& v = vehicles_[i];
    // Leader: own lane, then the mapped lanes downstream.
    int l = -1;
    if (slot[i] + 1 < static_cast<int>(own.size())) {
      l = own[slot[i] + 1];
    } else {
      int kk = k;
      int jj = j;
      while (kk + 1 < nseg) {
        jj = map_lane(kk, jj);
        ++kk;
        if (!lane_order_[kk][jj].empty()) {
          l = lane_order_[kk][jj].front();
          cross_leader_[i] = segs[k + 1].lanes < segs[k].lanes;
          break;
        }
      }
    }
    if (cross_leader_[i]) v.flags |= flags::projected_leader;
    if (l >= 0) {
      leader_idx_[i] = l;
      v.leader_id = vehicles_[l].id;
      v.gap = vehicles_[l].position - vehicles_[l].length - v.position;
    }
    // Follower: own lane, else the frontmost feeder vehicle upstream.
    if (slot[i] > 0) {
      follower_idx_[i] = own[slot[i] - 1];
    } else if (k > 0) {
      int best = -1;
      for (int jj = 0; jj < segs[k - 1].lanes; ++jj) {
        if (map_lane(k - 1, jj) != j || lane_order_[k - 1][jj].empty()) continue;
        const int c = lane_order_[k - 1][jj].back();
        if (best < 0 || vehicles_[c].position > vehicles_[best].position) best = c;
      }
      follower_idx_[i] = best;
    }
  }
  // Right of way at each lane drop, per target lane. A vehicle that can no
  // longer stop before the drop keeps it; otherwise the frontmost lane has it.
  const auto& fp = fleet_.params.failsafe;
  for (int k = 0; k + 1 < nseg; ++k) {
    if (segs[k + 1].lanes >= segs[k].lanes) continue;
    const double boundary = segment_start_[k + 1];
    for (int t = 0; t < segs[k + 1].lanes; ++t) {
      int committed = -1;
      int front = -1;
      for (int j = 0; j < segs[k].lanes; ++j) {
        if (map_lane(k, j) != t || lane_order_[k][j].empty()) continue;
        const int c = lane_order_[k][j].back();
        const auto& o = vehicles_[c];
        if (o.position < boundary - zone) continue;
        if (front < 0 || o.position > vehicles_[front].position) front = c;
        for (int c2 : lane_order_[k][j]) {
          const auto& o2 = vehicles_[c2];
          if (o2.position < boundary - zone) continue;
          if (!can_stop(boundary - o2.position, o2.velocity, 0.0, dt_, fp) &&
              (committed < 0 || o2.position > vehicles_[committed].position)) {
            committed = c2;
          }
        }
      }
      if (front < 0) continue;
      const int lane = vehicles_[committed >= 0 ? committed : front].lane;
      for (int j = 0; j < segs[k].lanes; ++j) {
        if (j == lane || map_lane(k, j) != t) continue;
        for (int c : lane_order_[k][j]) {
          if (vehicles_[c].position >= boundary - zone) must_yield_[c] = 1;
        }
      }
    }
  }
}

void World::check_no_overlap() const {
  for (std::size_t i = 0; i < vehicles_.size(); ++i) {
    const auto& v = vehicles_[i];
    if (!std::isfinite(v.position) || !std::isfinite(v.velocity) || v.velocity < 0) {
      throw SimulationError("invalid state for vehicle " + std::to_string(v.id));
    }
    if (leader_idx_[i] >= 0 && !cross_leader_[i] && !(v.gap > 0)) {
      std::ostringstream msg;
      msg << "overlap at step " << step_ << ": vehicle " << v.id << " gap " << v.gap
          << " to leader " << v.leader_id;
      throw SimulationError(msg.str());
    }
  }
}

// ---------------------------------------------------------------------------
// Stepping
// ---------------------------------------------------------------------------

void World::activate_controllers() {
  if (controllers_active_) return;
  controllers_active_ = true;
  for (const auto& v : vehicles_) {
    if (v.is_rv) log(v.id, "rv_activation");
  }
}

void World::enable_humanizer(const AccelEventModel& model, double start_time,
                             double end_time) {
  model.validate();
  humanizer_ = model;
  humanizer_start_ = start_time;
  humanizer_end_ = end_time;
  for (std::size_t i = 0; i < vehicles_.size(); ++i) {
    if (vehicles_[i].is_rv) continue;
    Rng r = make_rng(seed_, stream::humanizer, vehicles_[i].id);
    agents_[i]->events = schedule_events(model, vehicles_[i].id,
                                         std::max(start_time, time_), end_time, r);
    agents_[i]->next_event = 0;
  }
}

void World::inject_perturbation(int vehicle_id, double hold_velocity, double duration_s,
                                double dt) {
  const int i = index_of(vehicle_id);
  if (i < 0) {
    throw ConfigError("perturbation target " + std::to_string(vehicle_id) +
                      " is not in the network");
  }
  agents_[i]->hold_steps = static_cast<int>(std::lround(duration_s / dt));
  agents_[i]->hold_velocity = hold_velocity;
  log(vehicle_id, "perturbation_start", hold_velocity);
}

double World::speed_limit() const {
  return ring_ ? ring_->speed_limit : bottleneck_->speed_limit;
}

double World::command_for(int i, double dt, std::vector<Obstacle>& obstacles) {
  auto& v = vehicles_[i];
  auto& ag = *agents_[i];
  const auto& fp = fleet_.params.failsafe;
  v.flags &= flags::projected_leader;

  obstacles.clear();
  bool hold = must_yield_[i] != 0;
  if (leader_idx_[i] >= 0) {
    const auto& l = vehicles_[leader_idx_[i]];
    // Across a lane drop the projected gap only binds once it is safe to follow.
    const bool follow = !cross_leader_[i] ||
                        (v.gap > 0 && can_stop(v.gap, v.velocity, l.velocity, dt, fp));
    if (follow) {
      obstacles.push_back({v.gap, l.velocity, l.length});
    } else {
      hold = true;
    }
  }
  if (hold) {
    const int k = segment_of(v.position);
    const double line = segment_start_[k + 1] - v.position;
    if (can_stop(line, v.velocity, 0.0, dt, fp)) {
      obstacles.push_back({line, 0.0, 0.0});
      v.flags |= flags::yielding;
    } else if (leader_idx_[i] >= 0) {
      const auto& l = vehicles_[leader_idx_[i]];
      obstacles.push_back({v.gap, l.velocity, l.length});
    }
  }

  Perception in;
  in.time = time_;
  in.dt = dt;
  in.v = v.velocity;
  in.a_prev = v.acceleration;
  in.mean_velocity = mean_velocity();
  if (!obstacles.empty()) {
    const auto nearest = *std::min_element(
        obstacles.begin(), obstacles.end(),
        [](const Obstacle& a, const Obstacle& b) { return a.gap < b.gap; });
    in.has_leader = true;
    in.gap = nearest.gap;
    in.v_lead = nearest.velocity;
    in.lead_length = nearest.length;
  }
  if (follower_idx_[i] >= 0 && follower_idx_[i] != i) {
    in.has_follower = true;
    in.follower_gap = vehicles_[follower_idx_[i]].gap;
    in.v_follow = vehicles_[follower_idx_[i]].velocity;
  }

  double a = 0.0;
  const AccelEvent* event = nullptr;
  if (ag.hold_steps > 0) {
    a = velocity_to_accel(ag.hold_velocity, v.velocity, dt);
    v.flags |= flags::perturbed;
    if (--ag.hold_steps == 0) log(v.id, "perturbation_end", v.velocity);
  } else if (v.is_rv && controllers_active_) {
    SensingZoneSnapshot zone;
    const double range = ag.rv->sensing_range();
    if (range > 0) {
      zone = sensing_zone(i, range);
      in.zone = &zone;
    }
    a = std::clamp(ag.rv->command(in, ag.rng), -kActionBound, kActionBound);
    // RVs keep to the posted limit; gap-based laws would otherwise chase a far leader.
    a = std::min(a, velocity_to_accel(speed_limit(), v.velocity, dt));
    v.flags |= flags::rv_active;
  } else {
    a = ag.idm.command(in, ag.rng);
    if (humanizer_ && !v.is_rv) {
      event = ag.active_event(time_);
      if (event) {
        if (ag.next_event >= ag.logged_events) {
          log(v.id, "humanizer_event", event->magnitude);
          ag.logged_events = ag.next_event + 1;
        }
        a = apply_human_accel(v.is_rv, *event, a);
        v.flags |= flags::humanizer;
      }
    }
  }

  const double requested = a;
  for (const auto& o : obstacles) {
    const auto r = apply_failsafe(a, o.gap, v.velocity, o.velocity, dt, fp);
    a = r.accel;
    if (r.clamped) v.flags |= flags::failsafe;
    if (r.invalid_gap) v.flags |= flags::invalid_gap;
  }
  a = std::max(a, -fp.b_max);
  if (event && a < requested && !ag.clamp_logged) {
    log(v.id, "humanizer_clamped", a);
    ag.clamp_logged = true;
  }
  return a;
}

void World::step(double dt) {
  if (!(dt > 0)) throw ConfigError("step: dt must be positive");
  const int n = static_cast<int>(vehicles_.size());
  std::vector<double> accel(n);
  std::vector<Obstacle> obstacles;
  dt_ = dt;
  for (int i = 0; i < n; ++i) accel[i] = command_for(i, dt, obstacles);

  for (int i = 0; i < n; ++i) {
    auto& v = vehicles_[i];
    const double v_new = std::max(0.0, v.velocity + accel[i] * dt);
    v.acceleration = (v_new - v.velocity) / dt;
    v.velocity = v_new;
    v.position += v_new * dt;
    if (ring_) v.position = positive_mod(v.position, ring_->ring_length);
    if (agents_[i]->rv && v.is_rv && controllers_active_) {
      agents_[i]->rv->observe_applied(v.acceleration, v_new);
    }
  }
  ++step_;
  time_ = step_ * dt;

  if (bottleneck_) {
    bottleneck_transitions(dt);
    refresh_neighbors();
    bottleneck_inflow(dt);
  }
  refresh_neighbors();
  check_no_overlap();
}

void World::bottleneck_transitions(double /*dt*/) {
  const auto& segs = bottleneck_->segments;
  const double end = bottleneck_->total_length();
  std::size_t out = 0;
  for (std::size_t i = 0; i < vehicles_.size(); ++i) {
    auto& v = vehicles_[i];
    if (v.position >= end) {
      ++exits_;
      log(v.id, "exit");
      continue;
    }
    auto& ag = *agents_[i];
    const int now = segment_of(v.position);
    while (ag.segment < now) {
      const int lane = map_lane(ag.segment, v.lane);
      if (segs[ag.segment + 1].lanes < segs[ag.segment].lanes) {
        v.flags |= flags::merged;
        log(v.id, "merge", lane);
      }
      v.lane = lane;
      ++ag.segment;
    }
    if (out != i) {
      vehicles_[out] = std::move(vehicles_[i]);
      agents_[out] = std::move(agents_[i]);
    }
    ++out;
  }
  vehicles_.resize(out);
  agents_.resize(out);
}

void World::bottleneck_inflow(double dt) {
  if (inflow_->arrival(dt)) ++pending_;
  const auto& b = *bottleneck_;
  const int lanes = b.segments.front().lanes;
  const auto& fp = fleet_.params.failsafe;
  for (int tries = 0; tries < lanes && pending_ > 0; ++tries) {
    const int lane = next_lane_;
    next_lane_ = (next_lane_ + 1) % lanes;
    const auto& order = lane_order_[0][lane];
    double speed = b.insertion_speed;
    if (!order.empty()) {
      const auto& tail = vehicles_[order.front()];
      const double gap = tail.position - tail.length;
      if (gap < b.insertion_min_gap) continue;
      const double budget = gap + braking_distance(tail.velocity, fp.b_max, dt) - fp.min_gap;
      speed = std::min(speed, max_velocity_for_travel(budget, fp.b_max, dt));
    }
    VehicleState v;
    v.id = next_id_++;
    v.lane = lane;
    v.position = 0.0;
    v.velocity = std::max(0.0, speed);
    v.length = b.vehicle_length;
    const bool rv = inflow_->tag_rv();
    add_vehicle(v, rv);
    if (rv && controllers_active_) log(v.id, "rv_activation");
    --pending_;
    ++insertions_;
    log(v.id, "insertion", v.velocity);
  }
}

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

int choose_perturbation_target(const World& world, const PerturbationSpec& spec) {
  if (spec.target_id >= 0) return spec.target_id;
  const int lead = world.lead_rv_index();
  const auto& vs = world.vehicles();
  if (lead >= 0) return vs[lead].leader_id;
  std::vector<int> hvs;
  for (const auto& v : vs) {
    if (!v.is_rv) hvs.push_back(v.id);
  }
  if (hvs.empty()) throw ConfigError("perturbation: no human vehicle to perturb");
  Rng r = make_rng(world.seed(), stream::perturbation);
  std::uniform_int_distribution<std::size_t> pick(0, hvs.size() - 1);
  return hvs[pick(r)];
}

Trace run_episode(const Scenario& scenario, const FleetSpec& fleet,
                  const EpisodeSchedule& schedule, std::uint64_t seed,
                  const AccelEventModel* humanizer, const StepHook& on_step) {
  schedule.validate();
  World world = std::holds_alternative<RingScenario>(scenario)
                    ? World::build_ring(std::get<RingScenario>(scenario), fleet, seed)
                    : World::build_bottleneck(std::get<BottleneckScenario>(scenario), fleet,
                                              seed);
  Trace trace;
  auto& m = trace.meta;
  m.seed = seed;
  m.dt = schedule.dt;
  m.warmup_steps = schedule.warmup_steps;
  m.horizon_steps = schedule.horizon_steps;
  m.record_stride = schedule.record_stride;
  if (const auto* r = std::get_if<RingScenario>(&scenario)) {
    m.scenario = "ring";
    m.ring_length = r->ring_length;
    m.road_length = r->ring_length;
    m.speed_limit = r->speed_limit;
  } else {
    const auto& b = std::get<BottleneckScenario>(scenario);
    m.scenario = "bottleneck";
    m.road_length = b.total_length();
    m.speed_limit = b.speed_limit;
  }

  if (schedule.humanizer_enabled) {
    const AccelEventModel model = humanizer ? *humanizer : default_accel_model();
    const double start = schedule.humanizer_start_s >= 0 ? schedule.humanizer_start_s
                                                         : schedule.activation_time();
    world.enable_humanizer(model, start, schedule.end_time());
  }

  const int total = schedule.total_steps();
  const int perturb_step =
      schedule.perturbation ? static_cast<int>(std::lround(schedule.perturbation->start_s /
                                                           schedule.dt))
                            : -1;
  auto record = [&] {
    trace.snapshots.push_back({world.step_count(), world.time(), world.vehicles()});
  };
  trace.snapshots.reserve(total / schedule.record_stride + 2);
  record();
  for (int s = 0; s < total; ++s) {
    if (s == schedule.warmup_steps) world.activate_controllers();
    if (s == perturb_step) {
      const int target = choose_perturbation_target(world, *schedule.perturbation);
      world.inject_perturbation(target, schedule.perturbation->hold_velocity,
                                schedule.perturbation->duration_s, schedule.dt);
      m.perturbation_target = target;
      m.perturbation_start = world.time();
    }
    world.step(schedule.dt);
    if (on_step) on_step(world);
    if (world.step_count() % schedule.record_stride == 0 || world.step_count() == total) {
      record();
    }
  }
  m.insertions = world.insertions();
  m.exits = world.exits();
  trace.events = world.events();
  return trace;
}

}  // namespace mtc

#pragma once

#include <array>
#include <deque>
#include <memory>
#include <string>

#include "mtc/common.hpp"
#include "mtc/idm.hpp"
#include "mtc/zone.hpp"

namespace mtc {

// ---------------------------------------------------------------------------
// Parameter blocks
// ---------------------------------------------------------------------------

/// Bilateral control module gains.
struct BcmParams {
  double k_d = 0.2;
  double k_v = 0.8;
  double k_c = 0.1;
  double v_des = -1.0;  // <= 0: use the uniform-flow equilibrium velocity

  void validate() const;
};

/// Linear adaptive cruise control with first-order actuation lag.
struct LaccParams {
  double k1 = 0.3;
  double k2 = 0.4;
  double h = 1.0;    // desired time gap [s]
  double tau = 0.1;  // actuation time lag [s]

  void validate() const;
};

/// FollowerStopper. Boundaries grow with the squared closing speed.
struct FsParams {
  std::array<double, 3> dx0{4.5, 5.25, 6.0};  // base gaps [m]
  std::array<double, 3> d{1.5, 1.0, 0.5};     // decelerations [m/s^2]
  double U = -1.0;  // desired velocity; <= 0: equilibrium * u_scale
  double u_scale = 0.9;

  void validate() const;
};

/// Proportional-integral with saturation.
struct PiwsParams {
  double v_catch = 1.0;  // catch-up velocity [m/s]
  double g_l = 12.0;     // lower headway threshold, front to front [m]
  double g_u = 35.0;     // upper headway threshold [m]
  double gamma = 2.0;    // alpha ramp width [m]
  double window_s = 38.0;  // historical-average window [s]

  void validate() const;
};

/// Gap-opening stand-in for the trained RV policy.
struct ScriptedGapParams {
  double target_gap = 20.0;      // [m]
  double tracking_margin = 0.5;  // [m/s] below leader while opening
  double k_gap = 0.003;
  double k_speed = 0.04;

  void validate() const;
};

inline constexpr double kActionBound = 3.0;

// ---------------------------------------------------------------------------
// Pure control laws
// ---------------------------------------------------------------------------

/// k_d * delta_d + k_v * (dv_lead - dv_follow) + k_c * (v_des - v), where
/// delta_d = gap_lead - gap_follow, dv_lead = v_lead - v, dv_follow = v - v_follow.
double bcm_accel(const BcmParams& p, double delta_d, double dv_lead, double dv_follow,
                 double v);

/// First-order lag a_t = (1 - dt/tau) a_{t-1} + (dt/tau) a_cmd_{t-1}.
double lacc_accel(const LaccParams& p, double a_prev, double a_cmd_prev, double dt);

/// a_cmd = k1 (s - h v) + k2 dv_lead.
double lacc_cmd(const LaccParams& p, double s, double v, double dv_lead);

/// Boundaries dx_k = dx0_k + dv_minus^2 / (2 d_k).
std::array<double, 3> fs_boundaries(const FsParams& p, double dv_minus);

/// FollowerStopper command velocity for gap `dx` (requires resolved U > 0).
double fs_cmd_velocity(const FsParams& p, double dx, double v_lead, double v_self);

/// U + v_catch * clamp((dx - g_l) / (g_u - g_l), 0, 1).
double piws_target_velocity(const PiwsParams& p, double dx, double U);

/// beta (alpha v_target + (1 - alpha) v_lead) + (1 - beta) v_cmd_prev.
double piws_cmd_velocity(const PiwsParams& p, double dx, double v_lead, double v_cmd_prev,
                         double U, double alpha, double beta);

/// Tracks v_lead - margin until gap >= target, then v_lead; clamped to the
/// action bound.
double scripted_gap_accel(const ScriptedGapParams& p, double gap, double v, double v_lead);

/// Unclamped scripted_gap_accel.
double scripted_gap_accel_raw(const ScriptedGapParams& p, double gap, double v,
                              double v_lead);

/// Velocity command to acceleration over one step.
inline double velocity_to_accel(double v_cmd, double v_self, double dt) {
  return (v_cmd - v_self) / dt;
}

// ---------------------------------------------------------------------------
// Stateful per-vehicle controllers
// ---------------------------------------------------------------------------

enum class ControllerKind { idm, bcm, lacc, fs, piws, scripted_gap, policy, external };

std::string to_string(ControllerKind k);
ControllerKind parse_controller_kind(const std::string& s);

/// What a vehicle senses at the start of a step.
struct Perception {
  double time = 0.0;
  double dt = 0.1;
  double v = 0.0;
  double gap = 0.0;     // bumper gap to leader (large when no leader)
  double v_lead = 0.0;
  double lead_length = 5.0;  // headway = gap + lead_length
  bool has_leader = false;
  double follower_gap = 0.0;
  double v_follow = 0.0;
  bool has_follower = false;
  double a_prev = 0.0;  // acceleration applied last step
  double mean_velocity = 0.0;  // network average
  const SensingZoneSnapshot* zone = nullptr;  // set when sensing_range() > 0
};

class Controller {
 public:
  virtual ~Controller() = default;
  virtual ControllerKind kind() const = 0;
  /// Raw command [m/s^2]; action clamp and failsafe happen downstream.
  virtual double command(const Perception& in, Rng& rng) = 0;
  /// Called once the step's final acceleration is known.
  virtual void observe_applied(double /*a*/, double /*v_new*/) {}
  /// Length of the downstream sensing zone the controller needs; 0 for none.
  virtual double sensing_range() const { return 0.0; }
};

/// Replays an action set from outside (RL environment).
class ExternalController : public Controller {
 public:
  ControllerKind kind() const override { return ControllerKind::external; }
  double command(const Perception& /*in*/, Rng& /*rng*/) override { return action_; }
  void set_action(double a) { action_ = a; }

 private:
  double action_ = 0.0;
};

class IdmController : public Controller {
 public:
  explicit IdmController(IdmParams p) : p_(p) {}
  ControllerKind kind() const override { return ControllerKind::idm; }
  double command(const Perception& in, Rng& rng) override;

 private:
  IdmParams p_;
};

class BcmController : public Controller {
 public:
  explicit BcmController(BcmParams p) : p_(p) {}
  ControllerKind kind() const override { return ControllerKind::bcm; }
  double command(const Perception& in, Rng& rng) override;

 private:
  BcmParams p_;
};

class LaccController : public Controller {
 public:
  explicit LaccController(LaccParams p) : p_(p) {}
  ControllerKind kind() const override { return ControllerKind::lacc; }
  double command(const Perception& in, Rng& rng) override;
  void observe_applied(double a, double v_new) override;

 private:
  LaccParams p_;
  double a_prev_ = 0.0;
  double a_cmd_prev_ = 0.0;
  bool primed_ = false;
};

class FsController : public Controller {
 public:
  explicit FsController(FsParams p) : p_(p) {}
  ControllerKind kind() const override { return ControllerKind::fs; }
  double command(const Perception& in, Rng& rng) override;

 private:
  FsParams p_;
};

class PiwsController : public Controller {
 public:
  explicit PiwsController(PiwsParams p) : p_(p) {}
  ControllerKind kind() const override { return ControllerKind::piws; }
  double command(const Perception& in, Rng& rng) override;

  double historical_average() const;

 private:
  PiwsParams p_;
  std::deque<double> history_;
  double history_sum_ = 0.0;
  double v_cmd_ = 0.0;
  bool primed_ = false;
};

class ScriptedGapController : public Controller {
 public:
  explicit ScriptedGapController(ScriptedGapParams p) : p_(p) {}
  ControllerKind kind() const override { return ControllerKind::scripted_gap; }
  double command(const Perception& in, Rng& rng) override;

 private:
  ScriptedGapParams p_;
};

}  // namespace mtc

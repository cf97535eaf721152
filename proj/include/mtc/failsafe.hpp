#pragma once

namespace mtc {

struct FailsafeParams {
  double b_max = 9.0;     // emergency braking bound [m/s^2]
  double min_gap = 0.5;   // gap that must survive a joint emergency stop [m]
};

struct FailsafeResult {
  double accel = 0.0;
  bool clamped = false;      // the safe bound was tighter than the command
  bool invalid_gap = false;  // current gap was non-positive
};

/// Distance covered under the semi-implicit update when the vehicle keeps
/// velocity `v` for one step and then brakes at `b` every step until stopped:
/// dt * sum_{k>=0} max(0, v - k b dt).
double braking_travel(double v, double b, double dt);

/// Distance covered when braking at `b` starting immediately from `v`:
/// dt * sum_{k>=1} max(0, v - k b dt).
double braking_distance(double v, double b, double dt);

/// Largest next-step velocity whose braking_travel fits in `budget`.
double max_velocity_for_travel(double budget, double b, double dt);

/// Largest acceleration such that the follower, braking at b_max from the
/// next step on while the leader brakes at b_max from now, keeps at least
/// min_gap. May be below -b_max when the state is already unsafe.
double safe_acceleration(double gap, double v, double v_lead, double dt,
                         const FailsafeParams& p);

/// min(a_cmd, safe_acceleration) floored at -b_max. A non-positive gap
/// yields -b_max with invalid_gap set.
FailsafeResult apply_failsafe(double a_cmd, double gap, double v, double v_lead,
                              double dt, const FailsafeParams& p);

}  // namespace mtc

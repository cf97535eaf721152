#pragma once

#include "mtc/common.hpp"

namespace mtc {

/// Intelligent Driver Model parameters. Defaults are the common ring-road
/// settings (FLOW / Treiber & Kesting); all live in the scenario config.
struct IdmParams {
  double a_max = 1.0;  // maximum acceleration [m/s^2]
  double v0 = 30.0;    // desired velocity [m/s]
  double delta = 4.0;  // acceleration exponent
  double s0 = 2.0;     // minimum gap [m]
  double T = 1.0;      // desired time gap [s]
  double b = 1.5;      // comfortable deceleration [m/s^2]
  double noise_sigma = 0.2;  // additive Gaussian acceleration noise [m/s^2]

  void validate() const;
};

/// Desired gap s*(v, v_lead) = s0 + max(0, v T + v (v - v_lead) / (2 sqrt(a b))).
double idm_desired_gap(const IdmParams& p, double v, double v_lead);

/// IDM acceleration for bumper-to-bumper gap `s`. Throws DomainError if s <= 0.
double idm_accel(const IdmParams& p, double v, double s, double v_lead);

/// idm_accel plus N(0, noise_sigma^2) drawn from `rng`.
double idm_accel_noisy(const IdmParams& p, double v, double s, double v_lead, Rng& rng);

/// Velocity at which idm_accel(v, gap, v) == 0 (uniform-flow equilibrium).
double idm_equilibrium_velocity(const IdmParams& p, double gap);

/// Equilibrium velocity for `n` evenly spaced vehicles on a ring.
double ring_equilibrium_velocity(const IdmParams& p, double ring_length, int n,
                                 double vehicle_length = 5.0);

}  // namespace mtc

#include "mtc/idm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mtc {

void IdmParams::validate() const {
  if (!(a_max > 0 && v0 > 0 && b > 0 && T > 0)) {
    throw ConfigError("idm: a_max, v0, b and T must be positive");
  }
  if (!(s0 >= 0)) throw ConfigError("idm: s0 must be non-negative");
  if (!(delta >= 1)) throw ConfigError("idm: delta must be >= 1");
  if (!(noise_sigma >= 0)) throw ConfigError("idm: noise_sigma must be non-negative");
}

double idm_desired_gap(const IdmParams& p, double v, double v_lead) {
  const double interaction = v * (v - v_lead) / (2.0 * std::sqrt(p.a_max * p.b));
  return p.s0 + std::max(0.0, v * p.T + interaction);
}

double idm_accel(const IdmParams& p, double v, double s, double v_lead) {
  if (!(s > 0)) {
    throw DomainError("idm_accel: gap must be positive, got " + std::to_string(s));
  }
  const double ratio = idm_desired_gap(p, v, v_lead) / s;
  return p.a_max * (1.0 - std::pow(v / p.v0, p.delta) - ratio * ratio);
}

double idm_accel_noisy(const IdmParams& p, double v, double s, double v_lead, Rng& rng) {
  const double a = idm_accel(p, v, s, v_lead);
  if (p.noise_sigma == 0.0) return a;
  std::normal_distribution<double> noise(0.0, p.noise_sigma);
  return a + noise(rng);
}

double idm_equilibrium_velocity(const IdmParams& p, double gap) {
  if (!(gap > 0)) throw DomainError("idm_equilibrium_velocity: gap must be positive");
  // idm_accel(v, gap, v) is strictly decreasing in v; bisect on [0, v0].
  auto f = [&](double v) { return idm_accel(p, v, gap, v); };
  if (f(0.0) <= 0.0) return 0.0;
  double lo = 0.0;
  double hi = p.v0;
  for (int i = 0; i < 200 && hi - lo > 1e-13; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double ring_equilibrium_velocity(const IdmParams& p, double ring_length, int n,
                                 double vehicle_length) {
  if (n <= 0) throw ConfigError("ring_equilibrium_velocity: n must be positive");
  return idm_equilibrium_velocity(p, ring_length / n - vehicle_length);
}

}  // namespace mtc

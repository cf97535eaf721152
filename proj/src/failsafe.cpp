#include "mtc/failsafe.hpp"

#include <algorithm>
#include <cmath>

namespace mtc {

namespace {

// Number of strictly positive terms of max(0, v - k c) for k >= 0.
double positive_terms(double v, double c) {
  if (v <= 0) return 0.0;
  return std::ceil(v / c);
}

}  // namespace

double braking_travel(double v, double b, double dt) {
  const double c = b * dt;
  const double n = positive_terms(v, c);
  return dt * (n * v - c * n * (n - 1.0) / 2.0);
}

double braking_distance(double v, double b, double dt) {
  return braking_travel(v - b * dt, b, dt);
}

double max_velocity_for_travel(double budget, double b, double dt) {
  if (budget <= 0) return 0.0;
  const double c = b * dt;
  // braking_travel(n c) = dt c n (n + 1) / 2; smallest n reaching the budget.
  const double target = 2.0 * budget / (dt * c);
  double n = std::ceil((-1.0 + std::sqrt(1.0 + 4.0 * target)) / 2.0);
  n = std::max(n, 1.0);
  while (n > 1.0 && dt * c * (n - 1.0) * n / 2.0 >= budget) n -= 1.0;
  while (dt * c * n * (n + 1.0) / 2.0 < budget) n += 1.0;
  return (budget / dt + c * n * (n - 1.0) / 2.0) / n;
}

double safe_acceleration(double gap, double v, double v_lead, double dt,
                         const FailsafeParams& p) {
  const double budget = gap + braking_distance(v_lead, p.b_max, dt) - p.min_gap;
  const double v_next = max_velocity_for_travel(budget, p.b_max, dt);
  return (v_next - v) / dt;
}

FailsafeResult apply_failsafe(double a_cmd, double gap, double v, double v_lead,
                              double dt, const FailsafeParams& p) {
  FailsafeResult r;
  if (!(gap > 0)) {
    r.accel = -p.b_max;
    r.clamped = true;
    r.invalid_gap = true;
    return r;
  }
  const double a_safe = safe_acceleration(gap, v, v_lead, dt, p);
  r.clamped = a_safe < a_cmd;
  r.accel = std::max(-p.b_max, std::min(a_cmd, a_safe));
  return r;
}

}  // namespace mtc

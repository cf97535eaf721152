#pragma once

// Hand-transcribed reference formulas. Written from the model equations,
// without calling into the library, so tests compare two implementations.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace oracle {

inline constexpr double inf = std::numeric_limits<double>::infinity();

inline double idm(double a, double v0, double delta, double s0, double T, double b, double v,
                  double s, double vl) {
  double star = s0 + std::max(0.0, v * T + v * (v - vl) / (2.0 * std::sqrt(a * b)));
  return a * (1.0 - std::pow(v / v0, delta) - (star / s) * (star / s));
}

inline double bcm(double kd, double kv, double kc, double vdes, double dd, double dvl,
                  double dvf, double v) {
  return kd * dd + kv * (dvl - dvf) + kc * (vdes - v);
}

inline double lacc_lag(double tau, double dt, double a_prev, double acmd_prev) {
  return (1.0 - dt / tau) * a_prev + (dt / tau) * acmd_prev;
}

inline double lacc_cmd(double k1, double k2, double h, double s, double v, double dvl) {
  double ex = s - h * v;
  return k1 * ex + k2 * dvl;
}

// FollowerStopper, four branches.
inline double fs(const double dx0[3], const double d[3], double U, double dx, double vl,
                 double vs) {
  double v = vl < 0 ? 0 : vl;
  if (v > U) v = U;
  double dvm = vl - vs;
  if (dvm > 0) dvm = 0;
  double b1 = dx0[0] + dvm * dvm / (2 * d[0]);
  double b2 = dx0[1] + dvm * dvm / (2 * d[1]);
  double b3 = dx0[2] + dvm * dvm / (2 * d[2]);
  if (dx <= b1) return 0.0;
  if (dx <= b2) return v * (dx - b1) / (b2 - b1);
  if (dx <= b3) return v + (U - v) * (dx - b2) / (b3 - b2);
  return U;
}

inline double piws_target(double U, double vcatch, double gl, double gu, double dx) {
  double r = (dx - gl) / (gu - gl);
  if (r < 0) r = 0;
  if (r > 1) r = 1;
  return U + vcatch * r;
}

inline double piws_cmd(double beta, double alpha, double vtarget, double vl, double vprev) {
  return beta * (alpha * vtarget + (1 - alpha) * vl) + (1 - beta) * vprev;
}

inline double ttc(double vf, double vl, double s, double l) {
  if (vf > vl) return (s - l) / (vf - vl);
  return inf;
}

inline double drac(double vf, double vl, double s, double l) {
  if (vf > vl) return (vf - vl) * (vf - vl) / (s - l);
  return 0.0;
}

inline double pop_std(const std::vector<double>& x) {
  double m = 0;
  for (double a : x) m += a;
  m /= x.size();
  double q = 0;
  for (double a : x) q += (a - m) * (a - m);
  return std::sqrt(q / x.size());
}

inline int sgn(double x) { return (x > 0) - (x < 0); }

// Stage codes: 0 Forming, 1 Leaving, 2 Congested, 3 FreeFlow, 4 Undefined.
inline double reward_safety(double mean_v, double a, int stage, double lambda1 = 4) {
  double r = 0.2 * mean_v - 4 * std::abs(a);
  if (stage == 0 && sgn(a) >= 0) r += std::min(-1.0, -lambda1 * std::abs(a));
  return r;
}

inline double reward_efficiency(double mean_v, double a, int stage, double lambda2 = 10,
                                double lambda3 = 10) {
  double r = mean_v - 4 * std::abs(a);
  if ((stage == 0 || stage == 2 || stage == 4) && sgn(a) > 0) {
    r += std::min(-1.0, -lambda2 * std::abs(a));
  } else if (stage == 1 && sgn(a) < 0) {
    r += std::min(-1.0, -lambda3 * std::abs(a));
  }
  return r;
}

inline double reward_follower(double v, double a, double l4 = 0.2, double l5 = 4) {
  return l4 * v - l5 * std::abs(a);
}

// Prose rule: strictly increasing gaps -> Leaving, strictly decreasing ->
// Forming, otherwise all above threshold -> FreeFlow, all at or below ->
// Congested, anything else Undefined. "Strictly" means by more than tol.
inline int label(const std::vector<double>& gaps, double threshold = 15, double tol = 0.1) {
  if (gaps.size() < 2) return 4;
  int up = 0, down = 0;
  for (std::size_t i = 0; i + 1 < gaps.size(); ++i) {
    if (gaps[i + 1] > gaps[i] + tol) ++up;
    if (gaps[i + 1] < gaps[i] - tol) ++down;
  }
  const int steps = static_cast<int>(gaps.size()) - 1;
  if (up == steps) return 1;
  if (down == steps) return 0;
  int above = 0;
  for (double g : gaps) above += g > threshold;
  if (above == static_cast<int>(gaps.size())) return 3;
  if (above == 0) return 2;
  return 4;
}

// Rolls the braking envelope forward: follower applies `a` for one step then
// brakes at bmax, leader brakes at bmax from now. Returns the smallest gap.
inline double braking_rollout_min_gap(double gap, double vf, double vl, double a, double bmax,
                                      double dt) {
  double xf = 0, xl = gap;
  double f = std::max(0.0, vf + a * dt);
  double l = std::max(0.0, vl - bmax * dt);
  xf += f * dt;
  xl += l * dt;
  double best = xl - xf;
  for (int k = 0; k < 100000 && (f > 0 || l > 0); ++k) {
    f = std::max(0.0, f - bmax * dt);
    l = std::max(0.0, l - bmax * dt);
    xf += f * dt;
    xl += l * dt;
    best = std::min(best, xl - xf);
  }
  return best;
}

}  // namespace oracle

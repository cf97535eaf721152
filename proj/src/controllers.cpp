#include "mtc/controllers.hpp"

#include <algorithm>
#include <cmath>

namespace mtc {

void BcmParams::validate() const {
  if (!(k_d >= 0 && k_v >= 0 && k_c >= 0)) throw ConfigError("bcm: gains must be >= 0");
}

void LaccParams::validate() const {
  if (!(tau > 0)) throw ConfigError("lacc: tau must be positive");
  if (!(h > 0)) throw ConfigError("lacc: h must be positive");
}

void FsParams::validate() const {
  for (int k = 0; k < 3; ++k) {
    if (!(dx0[k] > 0 && d[k] > 0)) throw ConfigError("fs: dx0 and d must be positive");
  }
  if (!(dx0[0] < dx0[1] && dx0[1] < dx0[2])) {
    throw ConfigError("fs: dx0 must be strictly increasing");
  }
  if (!(d[0] > d[1] && d[1] > d[2])) throw ConfigError("fs: d must be strictly decreasing");
  if (!(u_scale > 0)) throw ConfigError("fs: u_scale must be positive");
}

void PiwsParams::validate() const {
  if (!(g_l < g_u)) throw ConfigError("piws: g_l must be below g_u");
  if (!(v_catch >= 0)) throw ConfigError("piws: v_catch must be >= 0");
  if (!(gamma > 0)) throw ConfigError("piws: gamma must be positive");
  if (!(window_s > 0)) throw ConfigError("piws: window_s must be positive");
}

void ScriptedGapParams::validate() const {
  if (!(target_gap > 0)) throw ConfigError("scripted_gap: target_gap must be positive");
  if (!(tracking_margin >= 0)) throw ConfigError("scripted_gap: tracking_margin must be >= 0");
  if (!(k_gap >= 0 && k_speed >= 0)) throw ConfigError("scripted_gap: gains must be >= 0");
}

double bcm_accel(const BcmParams& p, double delta_d, double dv_lead, double dv_follow,
                 double v) {
  return p.k_d * delta_d + p.k_v * (dv_lead - dv_follow) + p.k_c * (p.v_des - v);
}

double lacc_accel(const LaccParams& p, double a_prev, double a_cmd_prev, double dt) {
  const double r = dt / p.tau;
  return (1.0 - r) * a_prev + r * a_cmd_prev;
}

double lacc_cmd(const LaccParams& p, double s, double v, double dv_lead) {
  const double e_x = s - p.h * v;
  return p.k1 * e_x + p.k2 * dv_lead;
}

std::array<double, 3> fs_boundaries(const FsParams& p, double dv_minus) {
  std::array<double, 3> dx{};
  for (int k = 0; k < 3; ++k) {
    dx[k] = p.dx0[k] + dv_minus * dv_minus / (2.0 * p.d[k]);
  }
  return dx;
}

double fs_cmd_velocity(const FsParams& p, double dx, double v_lead, double v_self) {
  const double v = std::min(std::max(v_lead, 0.0), p.U);
  const double dv_minus = std::min(0.0, v_lead - v_self);
  const auto [dx1, dx2, dx3] = fs_boundaries(p, dv_minus);
  if (dx <= dx1) return 0.0;
  if (dx <= dx2) return v * (dx - dx1) / (dx2 - dx1);
  if (dx <= dx3) return v + (p.U - v) * (dx - dx2) / (dx3 - dx2);
  return p.U;
}

double piws_target_velocity(const PiwsParams& p, double dx, double U) {
  const double ramp = std::clamp((dx - p.g_l) / (p.g_u - p.g_l), 0.0, 1.0);
  return U + p.v_catch * ramp;
}

double piws_cmd_velocity(const PiwsParams& p, double dx, double v_lead, double v_cmd_prev,
                         double U, double alpha, double beta) {
  const double v_target = piws_target_velocity(p, dx, U);
  return beta * (alpha * v_target + (1.0 - alpha) * v_lead) + (1.0 - beta) * v_cmd_prev;
}

double scripted_gap_accel_raw(const ScriptedGapParams& p, double gap, double v,
                              double v_lead) {
  const double v_ref = gap < p.target_gap ? v_lead - p.tracking_margin : v_lead;
  return p.k_gap * (gap - p.target_gap) + p.k_speed * (v_ref - v);
}

double scripted_gap_accel(const ScriptedGapParams& p, double gap, double v, double v_lead) {
  return std::clamp(scripted_gap_accel_raw(p, gap, v, v_lead), -kActionBound, kActionBound);
}

std::string to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::idm: return "idm";
    case ControllerKind::bcm: return "bcm";
    case ControllerKind::lacc: return "lacc";
    case ControllerKind::fs: return "fs";
    case ControllerKind::piws: return "piws";
    case ControllerKind::scripted_gap: return "scripted_gap";
    case ControllerKind::policy: return "policy";
    case ControllerKind::external: return "external";
  }
  return "unknown";
}

ControllerKind parse_controller_kind(const std::string& s) {
  for (auto k : {ControllerKind::idm, ControllerKind::bcm, ControllerKind::lacc,
                 ControllerKind::fs, ControllerKind::piws, ControllerKind::scripted_gap,
                 ControllerKind::policy, ControllerKind::external}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown controller '" + s + "'");
}

// --- stateful controllers ---------------------------------------------------

double IdmController::command(const Perception& in, Rng& rng) {
  // No leader: free road.
  const double gap = in.has_leader ? in.gap : 1e9;
  const double v_lead = in.has_leader ? in.v_lead : in.v;
  if (gap <= 0) return -1e9;  // failsafe takes over
  return idm_accel_noisy(p_, in.v, gap, v_lead, rng);
}

double BcmController::command(const Perception& in, Rng& /*rng*/) {
  if (!in.has_leader) return bcm_accel(p_, 0.0, 0.0, 0.0, in.v);
  double delta_d = 0.0;
  double dv_follow = 0.0;
  if (in.has_follower) {
    delta_d = in.gap - in.follower_gap;
    dv_follow = in.v - in.v_follow;
  }
  return bcm_accel(p_, delta_d, in.v_lead - in.v, dv_follow, in.v);
}

double LaccController::command(const Perception& in, Rng& /*rng*/) {
  if (!primed_) {
    a_prev_ = in.a_prev;
    a_cmd_prev_ = in.a_prev;
    primed_ = true;
  }
  const double a = lacc_accel(p_, a_prev_, a_cmd_prev_, in.dt);
  a_cmd_prev_ = in.has_leader ? lacc_cmd(p_, in.gap + in.lead_length, in.v, in.v_lead - in.v)
                              : lacc_cmd(p_, p_.h * in.v, in.v, 0.0);
  return a;
}

void LaccController::observe_applied(double a, double /*v_new*/) { a_prev_ = a; }

double FsController::command(const Perception& in, Rng& /*rng*/) {
  if (!in.has_leader) return velocity_to_accel(p_.U, in.v, in.dt);
  const double v_cmd = fs_cmd_velocity(p_, in.gap, in.v_lead, in.v);
  return velocity_to_accel(v_cmd, in.v, in.dt);
}

double PiwsController::historical_average() const {
  return history_.empty() ? 0.0 : history_sum_ / static_cast<double>(history_.size());
}

double PiwsController::command(const Perception& in, Rng& /*rng*/) {
  const auto capacity = static_cast<std::size_t>(std::lround(p_.window_s / in.dt));
  history_.push_back(in.v);
  history_sum_ += in.v;
  while (history_.size() > capacity) {
    history_sum_ -= history_.front();
    history_.pop_front();
  }
  if (!primed_) {
    v_cmd_ = in.v;
    primed_ = true;
  }
  const double U = historical_average();
  const double dx = in.has_leader ? in.gap + in.lead_length : p_.g_u;
  const double v_lead = in.has_leader ? in.v_lead : U + p_.v_catch;
  const double dx_s = std::max(2.0 * (v_lead - in.v), 4.0);
  const double alpha = std::clamp((dx - dx_s) / p_.gamma, 0.0, 1.0);
  const double beta = 1.0 - 0.5 * alpha;
  v_cmd_ = piws_cmd_velocity(p_, dx, v_lead, v_cmd_, U, alpha, beta);
  return velocity_to_accel(v_cmd_, in.v, in.dt);
}

double ScriptedGapController::command(const Perception& in, Rng& /*rng*/) {
  if (!in.has_leader) return 0.0;
  return scripted_gap_accel(p_, in.gap, in.v, in.v_lead);
}

}  // namespace mtc

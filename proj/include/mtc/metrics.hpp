#pragma once

#include <limits>
#include <string>
#include <vector>

#include "mtc/world.hpp"

namespace mtc {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Time to collision, s = space headway, l = leader length. Infinite when
/// the follower is not faster. Throws DomainError when s <= l.
double ttc(double v_f, double v_l, double s, double l);

/// Deceleration rate to avoid a crash; 0 when the follower is not faster.
double drac(double v_f, double v_l, double s, double l);

enum class WarConvention { dampening, ratio_literal };

/// dampening: 1 - dv_follow / dv_lead; ratio_literal: 1 - dv_lead / dv_follow.
/// Throws DomainError when dv_lead <= 0, or dv_follow == 0 under ratio_literal.
double war(double dv_lead, double dv_follow, WarConvention c = WarConvention::dampening);

/// Population standard deviation. Throws DomainError on fewer than 2 samples.
double cav(const std::vector<double>& accel);

/// Gated polynomial fuel rate in mL/s; no acceleration term while braking.
struct FuelModel {
  double c0 = 0.5;    // idle [mL/s]
  double c1 = 0.02;   // [mL/m]
  double c2 = 1e-4;   // [mL s^2/m^3]
  double c4 = 0.3;    // [mL s/m^2] per unit positive acceleration
  double rate(double v, double a) const;
};

struct FuelEconomy {
  double mpg = 0.0;
  double distance_m = 0.0;
  double fuel_ml = 0.0;
  bool infinite = false;  // nothing burned
};

/// Accumulates distance and fuel sample by sample.
class FuelAccumulator {
 public:
  explicit FuelAccumulator(FuelModel m = {}) : m_(m) {}
  void add(double v, double a, double dt);
  FuelEconomy result() const;

 private:
  FuelModel m_;
  double distance_ = 0.0;
  double fuel_ = 0.0;
};

FuelEconomy fuel_economy(const Trace& trace, double t0, double t1, const FuelModel& m = {});

/// Network-average velocity per snapshot, with snapshot times.
struct Series {
  std::vector<double> time;
  std::vector<double> value;
};
Series network_mean_velocity(const Trace& trace);

struct Stability {
  bool stable = false;
  double time_to_stabilize = kInf;  // from `origin`; inf when not stable
  double final_std = 0.0;
  double max_std = 0.0;
  std::vector<double> window_end;  // sliding-window end times
  std::vector<double> window_std;
};

/// Sliding-window std of `series` over windows lying inside [t0, t1].
/// Stable iff the last window's std < sigma; time_to_stabilize is the end
/// of the first window of the final run below sigma, minus `origin`.
/// Throws DomainError when [t0, t1] is shorter than the window.
Stability stability_check(const Series& series, double sigma, double window_s, double t0,
                          double t1, double origin);

/// Ring: crossings of `reference` per hour. Bottleneck: exits per hour.
double throughput(const Trace& trace, double t0, double t1, double reference = 0.0);

/// Velocity drop of one vehicle over [t_on, t_on + window]: v(t_on) - min v.
double velocity_drop(const Trace& trace, int vehicle_id, double t_on, double window_s);

struct MetricsOptions {
  double window_start = -1.0;  // < 0: last measurement_window_s of the episode
  double window_end = -1.0;    // < 0: episode end
  double measurement_window_s = 360.0;
  double noise_sigma = 0.2;
  double stability_window_s = 60.0;
  double war_window_s = 30.0;
  WarConvention war_convention = WarConvention::dampening;
  double reference_position = 0.0;
  FuelModel fuel;
};

struct MetricsReport {
  double ttc_worst = kInf;
  double drac_worst = 0.0;
  double fuel_economy = 0.0;
  bool fuel_infinite = false;
  double throughput = 0.0;
  double cav = 0.0;
  double war = std::numeric_limits<double>::quiet_NaN();
  double war_literal = std::numeric_limits<double>::quiet_NaN();
  double dv_lead = std::numeric_limits<double>::quiet_NaN();
  double dv_follow = std::numeric_limits<double>::quiet_NaN();
  bool stable = false;
  double time_to_stabilize = kInf;
  double stability_std = 0.0;
  double mean_velocity = 0.0;
  double window_start = 0.0;
  double window_end = 0.0;
  std::vector<int> subjects;  // RVs, or one seeded-random stand-in
};

/// Vehicles whose TTC/DRAC/CAV are reported: every RV seen in the window,
/// or a single seeded-random vehicle when there are none.
std::vector<int> metric_subjects(const Trace& trace, double t0, double t1);

MetricsReport compute_metrics(const Trace& trace, const MetricsOptions& opt = {});

std::string metrics_to_json(const MetricsReport& r);
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsReport& r);

}  // namespace mtc

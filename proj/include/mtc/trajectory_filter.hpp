#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mtc/humanizer.hpp"

namespace mtc {

struct TrajectoryRecord {
  double time = 0.0;  // [s]
  int vehicle_id = 0;
  int lane = 0;
  double position = 0.0;  // front bumper [m]
  double velocity = 0.0;  // [m/s]
  std::optional<int> leader_id;
};

struct FollowingSample {
  double time = 0.0;
  double headway = 0.0;  // space headway, front to front [m]
  double v = 0.0;
  double v_lead = 0.0;
  double accel = 0.0;
};

struct CarFollowingPeriod {
  int follower_id = 0;
  int leader_id = 0;
  int lane = 0;
  double start_time = 0.0;
  double end_time = 0.0;
  std::vector<FollowingSample> samples;

  double duration() const { return end_time - start_time; }
};

struct FilterOptions {
  double speed_limit = 30.0;     // [m/s]
  double max_headway = 124.0;    // [m], strict
  double min_speed_frac = 0.1;   // of the speed limit, strict
  double min_duration = 5.0;     // [s]
  double max_sample_gap = 0.5;   // a longer hole in a vehicle's record splits a period [s]
};

/// Fills missing leader ids with the nearest same-lane vehicle ahead at the
/// same timestamp.
void resolve_leaders(std::vector<TrajectoryRecord>& records);

/// Maximal intervals satisfying all four car-following conditions, with
/// accelerations filled in. Records must be time-ordered per vehicle
/// (IoError otherwise).
std::vector<CarFollowingPeriod> detect_periods(const std::vector<TrajectoryRecord>& records,
                                               const FilterOptions& opt);
std::vector<CarFollowingPeriod> detect_periods(const std::vector<TrajectoryRecord>& records,
                                               double speed_limit, double max_headway = 124.0);

/// Re-applies the conditions to a period's own samples.
std::vector<CarFollowingPeriod> refilter(const CarFollowingPeriod& period,
                                         const FilterOptions& opt);

/// True when one sample meets the speed and headway conditions.
bool sample_passes(const FollowingSample& s, const FilterOptions& opt);

/// Central differences inside, one-sided at the ends. Throws DomainError on
/// fewer than 2 samples.
std::vector<double> extract_accelerations(const std::vector<double>& times,
                                          const std::vector<double>& velocities);
std::vector<double> extract_accelerations(const CarFollowingPeriod& period);

struct ExcursionPair {
  double magnitude = 0.0;  // signed peak [m/s^2]
  double duration = 0.0;   // [s]
};

struct ExcursionStats {
  std::vector<double> durations;
  std::vector<double> gaps;  // between consecutive excursion starts
  std::vector<ExcursionPair> pairs;

  void append(const ExcursionStats& other);
};

/// Runs of |a| > band. Duration = run length x sample interval.
ExcursionStats excursion_stats(const std::vector<double>& accels,
                               const std::vector<double>& times, double band = 1.0);

/// Histogram on bins aligned to multiples of `bin_width`, spanning the
/// occupied range. When `stats` is given its duration/gap ranges and a
/// fitted magnitude-duration exponent replace the defaults.
AccelEventModel build_histogram(const std::vector<double>& accels, double bin_width,
                                const ExcursionStats* stats = nullptr);

/// Header-detected CSV. Required: time, vehicle_id, position, velocity; lane
/// defaults to 0 when absent. Without a leader column, leaders are derived.
std::vector<TrajectoryRecord> read_trajectory_csv(const std::string& path);
std::vector<TrajectoryRecord> parse_trajectory_csv(const std::string& text);

void write_periods_csv(const std::vector<CarFollowingPeriod>& periods, const std::string& path);

std::string filter_stats_json(const std::vector<CarFollowingPeriod>& periods,
                              const ExcursionStats& stats, const AccelEventModel& model);

}  // namespace mtc

#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mtc/common.hpp"

namespace mtc {

struct HistogramBin {
  double low = 0.0;
  double high = 0.0;
  double mass = 0.0;
};

/// Empirical acceleration distribution plus the excursion laws used to turn
/// it into timed events.
struct AccelEventModel {
  std::vector<HistogramBin> bins;
  double nominal_low = -1.0;
  double nominal_high = 1.0;
  double duration_min = 0.1;   // [s]
  double duration_max = 20.0;  // [s]
  double gap_min = 15.0;       // time between event starts [s]
  double gap_max = 60.0;
  double magnitude_duration_exponent = 1.0;
  double duration_jitter = 0.2;  // multiplicative, +-

  /// Largest |bin edge|.
  double magnitude_cap() const;
  /// Mass of the histogram inside the nominal band (bins clipped to it).
  double nominal_mass() const;
  /// Throws IoError/ConfigError with a description on any violation.
  void validate() const;
};

/// Synthetic default: 37 % of the mass in [-1, 1] and secondary peaks in
/// [-4, -3] and [3, 4].
AccelEventModel default_accel_model();

/// CSV rows `bin_low,bin_high,mass`. Optional leading `# key=value` lines set
/// duration_range, gap_range, exponent and jitter.
AccelEventModel load_accel_histogram(const std::string& path);
AccelEventModel parse_accel_histogram(const std::string& text);
void save_accel_histogram(const AccelEventModel& model, const std::string& path);
std::string format_accel_histogram(const AccelEventModel& model);

struct EventSample {
  double magnitude = 0.0;    // signed [m/s^2], |m| > nominal band
  double duration = 0.0;     // [s]
  double gap_to_next = 0.0;  // [s] until the next event starts
};

/// Duration for |magnitude| before jitter: power-law interpolation from
/// duration_max at the band edge down to duration_min at magnitude_cap.
double nominal_event_duration(const AccelEventModel& model, double abs_magnitude);

/// Draw one out-of-band event. Throws ConfigError when the histogram has no
/// mass outside the nominal band.
EventSample sample_event(const AccelEventModel& model, Rng& rng);

/// Draw an acceleration from the full histogram.
double sample_acceleration(const AccelEventModel& model, Rng& rng);

/// Histogram restricted to the out-of-band region and renormalised.
std::vector<HistogramBin> out_of_band_bins(const AccelEventModel& model);

struct AccelEvent {
  int vehicle_id = 0;
  double start_time = 0.0;
  double duration = 0.0;
  double magnitude = 0.0;

  bool active_at(double t) const { return t >= start_time && t < start_time + duration; }
};

/// Upfront event schedule for one vehicle on [t_begin, t_end).
std::vector<AccelEvent> schedule_events(const AccelEventModel& model, int vehicle_id,
                                        double t_begin, double t_end, Rng& rng);

/// Event override: returns the event magnitude when `event` is set, the model
/// command otherwise. Throws DomainError when applied to a robot vehicle.
double apply_human_accel(bool is_rv, const std::optional<AccelEvent>& event,
                         double model_command);

}  // namespace mtc

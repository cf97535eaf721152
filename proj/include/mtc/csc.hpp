#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mtc/mlp.hpp"
#include "mtc/world.hpp"
#include "mtc/zone.hpp"

namespace mtc {

enum class CongestionStage { Forming = 0, Leaving, Congested, FreeFlow, Undefined };
inline constexpr int kStageCount = 5;

std::string to_string(CongestionStage s);
CongestionStage parse_stage(const std::string& s);
std::array<double, kStageCount> onehot(CongestionStage s);

struct LabelOptions {
  double gap_threshold = 15.0;  // [m]
  double tolerance = 0.1;       // monotone steps must exceed this [m]
  double vehicle_length = 5.0;  // turns front-to-front positions into bumper gaps
};

/// Bumper gaps between consecutive zone vehicles, starting from the observer.
std::vector<double> zone_gaps(const SensingZoneSnapshot& z, double vehicle_length = 5.0);

/// Rule label from a gap sequence. Fewer than 2 gaps gives Undefined.
CongestionStage label_gaps(const std::vector<double>& gaps, const LabelOptions& opt = {});
CongestionStage label_window(const SensingZoneSnapshot& z, const LabelOptions& opt = {});

struct FeatureSpec {
  int max_vehicles = 8;
  double zone_length = 50.0;
  double speed_limit = 30.0 * kMph;

  int size() const { return 3 * max_vehicles; }
};

/// (rel_pos / zone_length, rel_vel / speed_limit) per slot, zero-padded,
/// followed by a presence mask.
std::vector<double> zone_features(const SensingZoneSnapshot& z, const FeatureSpec& spec);

/// Sensing zone of `observer_id` in a recorded snapshot, walking leader ids.
SensingZoneSnapshot zone_from_snapshot(const Snapshot& snap, int observer_id,
                                       double zone_length);

struct CscModel {
  Mlp net;
  FeatureSpec features;
  LabelOptions labels;

  static CscModel create(const FeatureSpec& spec, const std::vector<int>& hidden, Rng& rng);

  std::vector<double> probabilities(const SensingZoneSnapshot& z) const;
  CongestionStage forecast(const SensingZoneSnapshot& z) const;

  std::string to_json() const;
  static CscModel from_json(const std::string& text);
  void save(const std::string& path) const;
  static CscModel load(const std::string& path);
};

struct Dataset {
  int n_features = 0;
  std::vector<double> x;  // row-major
  std::vector<int> y;
  std::vector<int> episode;

  std::size_t size() const { return y.size(); }
  const double* row(std::size_t i) const { return x.data() + i * static_cast<std::size_t>(n_features); }
  void push(const std::vector<double>& f, int label, int ep);
  std::array<std::size_t, kStageCount> class_counts() const;
};

struct DatasetOptions {
  int forecast_offset = 10;    // [steps]
  int observers_per_trace = 4;  // used when a trace has no RVs
  double t_begin = 0.0;        // ignore samples before this time [s]
  double zone_length = 50.0;
  FeatureSpec features;
  LabelOptions labels;
  std::uint64_t seed = 0;
};

/// Features at t, rule label at t + offset. Needs stride-1 traces.
Dataset make_dataset(const std::vector<Trace>& traces, const DatasetOptions& opt);

/// Downsample every class to the smallest count among classes with at
/// least `min_class_count` samples; rarer classes are dropped.
Dataset balance(const Dataset& d, std::uint64_t seed, std::size_t min_class_count = 100);

/// Whole episodes go to one side; roughly `test_fraction` of them to test.
void split_by_episode(const Dataset& d, double test_fraction, std::uint64_t seed,
                      Dataset& train, Dataset& test);

/// Mean cross-entropy over `rows` and its gradient w.r.t. the parameters.
double loss_and_gradient(const Mlp& net, const Dataset& d, const std::vector<std::size_t>& rows,
                         std::vector<double>& grad);

struct TrainOptions {
  int epochs = 400;
  int batch_size = 64;
  double learning_rate = 0.02;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

struct TrainResult {
  std::vector<double> epoch_loss;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

TrainResult train_classifier(Mlp& net, const Dataset& train, const Dataset& test,
                             const TrainOptions& opt);

double accuracy(const Mlp& net, const Dataset& d);

/// Ring traces for the dataset: all-IDM, stride 1, one per (density, seed).
std::vector<Trace> generate_csc_traces(const std::vector<double>& densities_veh_km,
                                       const std::vector<std::uint64_t>& seeds, int steps);

void write_dataset_csv(const Dataset& d, const std::string& path);

}  // namespace mtc

#pragma once

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mtc/csc.hpp"
#include "mtc/mlp.hpp"
#include "mtc/world.hpp"

namespace mtc {

struct RewardWeights {
  double lambda1 = 4.0;   // safety shaping
  double lambda2 = 10.0;  // efficiency shaping, accelerating into congestion
  double lambda3 = 10.0;  // efficiency shaping, braking while it clears
  double lambda4 = 0.2;   // follower velocity
  double lambda5 = 4.0;   // follower acceleration
  double velocity_coeff = 0.2;
  double accel_penalty_coeff = 4.0;
  bool follower_signed_accel = false;

  static RewardWeights safety() { return {}; }
  static RewardWeights efficiency() {
    RewardWeights w;
    w.velocity_coeff = 1.0;
    return w;
  }
  void validate() const;
};

inline constexpr int kObservationSize = 3 + kStageCount;

struct RvObservation {
  double v = 0.0;
  double r_p = 0.0;  // leader front minus own front [m]
  double r_v = 0.0;  // leader velocity minus own [m/s]
  std::array<double, kStageCount> stage{};
  bool leader_missing = false;

  std::vector<double> to_vector() const;
  CongestionStage stage_value() const;
};

RvObservation make_observation(double v, double r_p, double r_v, CongestionStage stage);

/// Observation of the vehicle at `index`. The stage comes from `csc` when
/// given, else from the rule label of the current zone. Without a leader the
/// leader fields are (zone_length, 0) and leader_missing is set.
RvObservation build_observation(const World& world, int index, const CscModel* csc,
                                double zone_length = 50.0);

/// Same, from a controller's perception.
RvObservation observation_from_perception(const Perception& in, const CscModel* csc,
                                          double zone_length = 50.0);

double clamp_action(double a_raw);

/// sign(0) counts as 0 in both shaping conditions.
double reward_safety_stability(double mean_velocity, double a_n, CongestionStage forecast,
                               const RewardWeights& w = RewardWeights::safety());
double reward_efficiency(double mean_velocity, double a_n, CongestionStage forecast,
                         const RewardWeights& w = RewardWeights::efficiency());
double reward_follower(double v_follower, double a_follower, const RewardWeights& w = {});

enum class RewardVariant { safety, efficiency };
std::string to_string(RewardVariant v);
RewardVariant parse_reward_variant(const std::string& s);

/// Gaussian policy: MLP mean, state-independent log standard deviation.
struct GaussianPolicy {
  Mlp net;
  double log_std = 0.0;
  std::vector<double> input_scale;  // observation is divided by this

  static GaussianPolicy create(int obs_size, const std::vector<int>& hidden, Rng& rng,
                               std::vector<double> input_scale = {});
  std::vector<double> scaled(const std::vector<double>& obs) const;
  double mean(const std::vector<double>& obs) const;
  double sample(const std::vector<double>& obs, Rng& rng) const;

  std::string to_json() const;
  static GaussianPolicy from_json(const std::string& text);
  void save(const std::string& path) const;
  static GaussianPolicy load(const std::string& path);
};

/// Input scaling for ring observations.
std::vector<double> default_observation_scale(double speed_limit, double zone_length = 50.0);

/// RV driven by a policy's mean action.
class PolicyController : public Controller {
 public:
  PolicyController(std::shared_ptr<const GaussianPolicy> policy,
                   std::shared_ptr<const CscModel> csc, double zone_length = 50.0);
  ControllerKind kind() const override { return ControllerKind::policy; }
  double command(const Perception& in, Rng& rng) override;
  double sensing_range() const override { return zone_length_; }

 private:
  std::shared_ptr<const GaussianPolicy> policy_;
  std::shared_ptr<const CscModel> csc_;
  double zone_length_;
};

struct StepResult {
  std::vector<double> observation;
  double reward = 0.0;
  bool done = false;
};

class Env {
 public:
  virtual ~Env() = default;
  virtual int observation_size() const = 0;
  virtual std::vector<double> reset(std::uint64_t seed) = 0;
  virtual StepResult step(double action) = 0;
};

/// One vehicle; reward -a^2 for every step. Sanity check for trainers.
class ToyEnv : public Env {
 public:
  explicit ToyEnv(int horizon = 20) : horizon_(horizon) {}
  int observation_size() const override { return kObservationSize; }
  std::vector<double> reset(std::uint64_t seed) override;
  StepResult step(double action) override;

 private:
  int horizon_;
  int t_ = 0;
};

struct RingEnvConfig {
  double density_veh_km = 85.0;
  int n_vehicles = 22;
  int warmup_steps = 2500;
  int episode_steps = 600;
  double dt = 0.1;
  double zone_length = 50.0;
  RewardVariant variant = RewardVariant::safety;
  RewardWeights weights = RewardWeights::safety();
  ControllerSet params;
};

/// Single-RV ring. The RV drives as IDM through warmup, then takes actions.
class RingEnv : public Env {
 public:
  RingEnv(RingEnvConfig cfg, std::shared_ptr<const CscModel> csc);
  int observation_size() const override { return kObservationSize; }
  std::vector<double> reset(std::uint64_t seed) override;
  StepResult step(double action) override;

  const World& world() const { return *world_; }
  int rv_index() const;
  int missing_leader_steps() const { return missing_leader_; }

 private:
  RingEnvConfig cfg_;
  std::shared_ptr<const CscModel> csc_;
  std::optional<World> world_;
  int t_ = 0;
  int missing_leader_ = 0;
  RvObservation last_;
};

/// Return of one scripted-gap episode on the same ring, same seed and reward.
double scripted_gap_return(const RingEnvConfig& cfg, std::shared_ptr<const CscModel> csc,
                           std::uint64_t seed);

struct PolicyTrainOptions {
  int episodes = 200;
  double learning_rate = 0.01;
  double gamma = 0.99;
  double grad_clip = 5.0;
  std::vector<int> hidden{32, 32};
  double initial_log_std = 0.0;
  std::vector<double> input_scale;
  std::uint64_t seed = 0;
};

struct PolicyTrainResult {
  GaussianPolicy policy;
  std::vector<double> episode_returns;
  std::vector<double> mean_abs_action;
};

/// Vanilla policy gradient: REINFORCE with a per-timestep moving-average
/// baseline and Adam.
/// Throws SimulationError with diagnostics when the return turns non-finite.
PolicyTrainResult train_policy(Env& env, const PolicyTrainOptions& opt);

}  // namespace mtc

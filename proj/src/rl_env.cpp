#include "mtc/rl_env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace mtc {

void RewardWeights::validate() const {
  for (double x : {lambda1, lambda2, lambda3, lambda4, lambda5, velocity_coeff, accel_penalty_coeff}) {
    if (!(x >= 0) || !std::isfinite(x)) throw ConfigError("reward weights must be finite and >= 0");
  }
}

std::vector<double> RvObservation::to_vector() const {
  std::vector<double> o{v, r_p, r_v};
  o.insert(o.end(), stage.begin(), stage.end());
  return o;
}

CongestionStage RvObservation::stage_value() const {
  return static_cast<CongestionStage>(argmax(std::vector<double>(stage.begin(), stage.end())));
}

RvObservation make_observation(double v, double r_p, double r_v, CongestionStage stage) {
  RvObservation o;
  o.v = v;
  o.r_p = r_p;
  o.r_v = r_v;
  o.stage = onehot(stage);
  return o;
}

RvObservation build_observation(const World& world, int index, const CscModel* csc,
                                double zone_length) {
  const auto& me = world.vehicles().at(static_cast<std::size_t>(index));
  const auto zone = world.sensing_zone(index, zone_length);
  const auto stage = csc ? csc->forecast(zone) : label_window(zone);
  const auto lead = world.leader(index);
  if (!lead) {
    auto o = make_observation(me.velocity, zone_length, 0.0, stage);
    o.leader_missing = true;
    return o;
  }
  const double len = world.vehicles().at(static_cast<std::size_t>(lead->index)).length;
  return make_observation(me.velocity, lead->gap + len, lead->velocity - me.velocity, stage);
}

RvObservation observation_from_perception(const Perception& in, const CscModel* csc,
                                          double zone_length) {
  SensingZoneSnapshot empty;
  empty.zone_length = zone_length;
  const auto& zone = in.zone ? *in.zone : empty;
  const auto stage = csc ? csc->forecast(zone) : label_window(zone);
  if (!in.has_leader) {
    auto o = make_observation(in.v, zone_length, 0.0, stage);
    o.leader_missing = true;
    return o;
  }
  return make_observation(in.v, in.gap + in.lead_length, in.v_lead - in.v, stage);
}

double clamp_action(double a) { return std::clamp(a, -kActionBound, kActionBound); }

namespace {
int sign(double x) { return (x > 0) - (x < 0); }
}  // namespace

double reward_safety_stability(double mean_v, double a, CongestionStage f, const RewardWeights& w) {
  double r = w.velocity_coeff * mean_v - w.accel_penalty_coeff * std::abs(a);
  if (f == CongestionStage::Forming && sign(a) >= 0) r += std::min(-1.0, -w.lambda1 * std::abs(a));
  return r;
}

double reward_efficiency(double mean_v, double a, CongestionStage f, const RewardWeights& w) {
  double r = w.velocity_coeff * mean_v - w.accel_penalty_coeff * std::abs(a);
  const bool jammed = f == CongestionStage::Forming || f == CongestionStage::Congested ||
                      f == CongestionStage::Undefined;
  if (jammed && sign(a) > 0) {
    r += std::min(-1.0, -w.lambda2 * std::abs(a));
  } else if (f == CongestionStage::Leaving && sign(a) < 0) {
    r += std::min(-1.0, -w.lambda3 * std::abs(a));
  }
  return r;
}

double reward_follower(double v, double a, const RewardWeights& w) {
  return w.lambda4 * v - w.lambda5 * (w.follower_signed_accel ? a : std::abs(a));
}

std::string to_string(RewardVariant v) {
  return v == RewardVariant::safety ? "safety" : "efficiency";
}

RewardVariant parse_reward_variant(const std::string& s) {
  if (s == "safety") return RewardVariant::safety;
  if (s == "efficiency") return RewardVariant::efficiency;
  throw ConfigError("unknown reward variant '" + s + "' (safety|efficiency)");
}

GaussianPolicy GaussianPolicy::create(int obs_size, const std::vector<int>& hidden, Rng& rng,
                                      std::vector<double> scale) {
  std::vector<int> sizes{obs_size};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  GaussianPolicy p;
  p.net = Mlp::random(sizes, rng);
  // Small output layer so the initial mean action is near zero.
  const std::size_t last = p.net.layers() - 1;
  for (int i = 0; i < sizes[sizes.size() - 2]; ++i) p.net.weights(last)[i] *= 0.01;
  if (scale.empty()) scale.assign(static_cast<std::size_t>(obs_size), 1.0);
  if (static_cast<int>(scale.size()) != obs_size) throw ConfigError("policy: input scale size mismatch");
  p.input_scale = std::move(scale);
  return p;
}

std::vector<double> GaussianPolicy::scaled(const std::vector<double>& obs) const {
  if (obs.size() != input_scale.size()) throw DomainError("policy: observation size mismatch");
  std::vector<double> x(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) x[i] = obs[i] / input_scale[i];
  return x;
}

double GaussianPolicy::mean(const std::vector<double>& obs) const {
  return net.forward(scaled(obs))[0];
}

double GaussianPolicy::sample(const std::vector<double>& obs, Rng& rng) const {
  std::normal_distribution<double> n(0.0, 1.0);
  return mean(obs) + std::exp(log_std) * n(rng);
}

std::string GaussianPolicy::to_json() const {
  auto j = net.to_json();
  j["kind"] = "gaussian_policy";
  j["log_std"] = log_std;
  j["normalization"] = {{"input_scale", input_scale}};
  return j.dump();
}

GaussianPolicy GaussianPolicy::from_json(const std::string& text) {
  GaussianPolicy p;
  try {
    const auto j = nlohmann::json::parse(text);
    p.net = Mlp::from_json(j);
    p.log_std = j.at("log_std").get<double>();
    p.input_scale = j.at("normalization").at("input_scale").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("policy json: ") + e.what());
  }
  if (static_cast<int>(p.input_scale.size()) != p.net.input_size() || p.net.output_size() != 1) {
    throw IoError("policy json: shape mismatch");
  }
  return p;
}

void GaussianPolicy::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << to_json() << "\n";
}

GaussianPolicy GaussianPolicy::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json(ss.str());
}

std::vector<double> default_observation_scale(double speed_limit, double zone_length) {
  std::vector<double> s{speed_limit, zone_length, speed_limit};
  s.resize(kObservationSize, 1.0);
  return s;
}

PolicyController::PolicyController(std::shared_ptr<const GaussianPolicy> policy,
                                   std::shared_ptr<const CscModel> csc, double zone_length)
    : policy_(std::move(policy)), csc_(std::move(csc)), zone_length_(zone_length) {
  if (!policy_) throw ConfigError("policy controller: no policy");
}

double PolicyController::command(const Perception& in, Rng& /*rng*/) {
  const auto obs = observation_from_perception(in, csc_.get(), zone_length_);
  return policy_->mean(obs.to_vector());
}

std::vector<double> ToyEnv::reset(std::uint64_t /*seed*/) {
  t_ = 0;
  return make_observation(5.0, 20.0, 0.0, CongestionStage::Congested).to_vector();
}

StepResult ToyEnv::step(double action) {
  ++t_;
  return {make_observation(5.0, 20.0, 0.0, CongestionStage::Congested).to_vector(),
          -action * action, t_ >= horizon_};
}

RingEnv::RingEnv(RingEnvConfig cfg, std::shared_ptr<const CscModel> csc)
    : cfg_(std::move(cfg)), csc_(std::move(csc)) {
  cfg_.weights.validate();
  if (cfg_.episode_steps <= 0 || cfg_.warmup_steps < 0) throw ConfigError("ring env: invalid step counts");
}

int RingEnv::rv_index() const {
  const auto& vs = world_->vehicles();
  for (std::size_t i = 0; i < vs.size(); ++i) {
    if (vs[i].is_rv) return static_cast<int>(i);
  }
  throw SimulationError("ring env: no RV");
}

std::vector<double> RingEnv::reset(std::uint64_t seed) {
  FleetSpec fleet;
  fleet.rv_controller = ControllerKind::external;
  fleet.rv_count = 1;
  fleet.params = cfg_.params;
  fleet.factory = [](int) { return std::make_unique<ExternalController>(); };
  world_.emplace(World::build_ring(RingScenario::from_density(cfg_.density_veh_km, cfg_.n_vehicles),
                                   fleet, seed));
  for (int s = 0; s < cfg_.warmup_steps; ++s) world_->step(cfg_.dt);
  world_->activate_controllers();
  t_ = 0;
  missing_leader_ = 0;
  last_ = build_observation(*world_, rv_index(), csc_.get(), cfg_.zone_length);
  return last_.to_vector();
}

StepResult RingEnv::step(double action) {
  if (!world_) throw ConfigError("ring env: step before reset");
  const int idx = rv_index();
  auto* ext = dynamic_cast<ExternalController*>(world_->controller(idx));
  if (!ext) throw SimulationError("ring env: RV is not externally driven");
  ext->set_action(clamp_action(action));
  const auto forecast = last_.stage_value();
  world_->step(cfg_.dt);
  ++t_;
  const int j = rv_index();
  const double a = world_->vehicles()[static_cast<std::size_t>(j)].acceleration;
  const double mv = world_->mean_velocity();
  StepResult r;
  r.reward = cfg_.variant == RewardVariant::safety
                 ? reward_safety_stability(mv, a, forecast, cfg_.weights)
                 : reward_efficiency(mv, a, forecast, cfg_.weights);
  last_ = build_observation(*world_, j, csc_.get(), cfg_.zone_length);
  if (last_.leader_missing) ++missing_leader_;
  r.observation = last_.to_vector();
  r.done = t_ >= cfg_.episode_steps;
  return r;
}

double scripted_gap_return(const RingEnvConfig& cfg, std::shared_ptr<const CscModel> csc,
                           std::uint64_t seed) {
  RingEnv env(cfg, std::move(csc));
  env.reset(seed);
  double total = 0.0;
  for (;;) {
    const int i = env.rv_index();
    const auto& me = env.world().vehicles()[static_cast<std::size_t>(i)];
    const auto lead = env.world().leader(i);
    const double a = lead ? scripted_gap_accel(cfg.params.scripted_gap, lead->gap, me.velocity,
                                               lead->velocity)
                          : 0.0;
    const auto r = env.step(a);
    total += r.reward;
    if (r.done) break;
  }
  return total;
}

PolicyTrainResult train_policy(Env& env, const PolicyTrainOptions& opt) {
  if (opt.episodes < 0) throw ConfigError("train_policy: episodes must be >= 0");
  auto rng = make_rng(opt.seed, stream::training, 0xB0);
  PolicyTrainResult res;
  res.policy = GaussianPolicy::create(env.observation_size(), opt.hidden, rng, opt.input_scale);
  res.policy.log_std = opt.initial_log_std;
  auto& pol = res.policy;
  Adam adam(opt.learning_rate);
  std::vector<double> theta, grad, g_params;
  Mlp::Cache cache;
  std::vector<double> baseline;
  for (int ep = 0; ep < opt.episodes; ++ep) {
    std::vector<std::vector<double>> xs;
    std::vector<double> mus, acts, rews;
    auto obs = env.reset(mix64(opt.seed) ^ static_cast<std::uint64_t>(ep));
    for (;;) {
      const auto x = pol.scaled(obs);
      const double mu = pol.net.forward(x)[0];
      std::normal_distribution<double> n(0.0, 1.0);
      const double a = mu + std::exp(pol.log_std) * n(rng);
      const auto step = env.step(a);
      xs.push_back(x);
      mus.push_back(mu);
      acts.push_back(a);
      rews.push_back(step.reward);
      obs = step.observation;
      if (step.done) break;
    }
    double ret = 0.0, abs_a = 0.0;
    for (double r : rews) ret += r;
    for (double a : acts) abs_a += std::abs(a);
    if (!std::isfinite(ret)) {
      throw SimulationError("train_policy: non-finite return at episode " + std::to_string(ep) +
                            " (log_std=" + std::to_string(pol.log_std) + ")");
    }
    res.episode_returns.push_back(ret);
    res.mean_abs_action.push_back(abs_a / static_cast<double>(acts.size()));

    const std::size_t T = rews.size();
    std::vector<double> G(T);
    double run = 0.0;
    for (std::size_t t = T; t-- > 0;) G[t] = run = rews[t] + opt.gamma * run;
    // Per-timestep moving-average baseline; advantages scaled to unit spread.
    std::vector<double> adv(T);
    for (std::size_t t = 0; t < T; ++t) {
      if (t >= baseline.size()) baseline.push_back(G[t]);
      adv[t] = G[t] - baseline[t];
      baseline[t] = 0.9 * baseline[t] + 0.1 * G[t];
    }
    double ss = 0.0;
    for (double x : adv) ss += x * x / static_cast<double>(T);
    const double sd = std::sqrt(ss) > 1e-8 ? std::sqrt(ss) : 1.0;

    // Gradient of the negative surrogate, averaged over steps.
    g_params.assign(pol.net.params().size(), 0.0);
    double g_logstd = 0.0;
    const double sigma2 = std::exp(2.0 * pol.log_std);
    std::vector<double> d_out(1);
    for (std::size_t t = 0; t < T; ++t) {
      const double w = adv[t] / sd / static_cast<double>(T);
      const double z = acts[t] - mus[t];
      pol.net.forward(xs[t].data(), cache);
      d_out[0] = -w * z / sigma2;
      pol.net.backward(cache, d_out, g_params);
      g_logstd += -w * (z * z / sigma2 - 1.0);
    }
    double norm = g_logstd * g_logstd;
    for (double g : g_params) norm += g * g;
    norm = std::sqrt(norm);
    if (!std::isfinite(norm)) {
      throw SimulationError("train_policy: non-finite gradient at episode " + std::to_string(ep));
    }
    const double scale = norm > opt.grad_clip ? opt.grad_clip / norm : 1.0;
    for (auto& g : g_params) g *= scale;
    // The log std rides along as the last coordinate.
    theta = pol.net.params();
    theta.push_back(pol.log_std);
    grad = g_params;
    grad.push_back(g_logstd * scale);
    adam.step(theta, grad);
    pol.log_std = std::clamp(theta.back(), -5.0, 2.0);
    theta.pop_back();
    pol.net.params() = theta;
  }
  return res;
}

}  // namespace mtc

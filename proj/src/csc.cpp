#include "mtc/csc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace mtc {

std::string to_string(CongestionStage s) {
  switch (s) {
    case CongestionStage::Forming: return "Forming";
    case CongestionStage::Leaving: return "Leaving";
    case CongestionStage::Congested: return "Congested";
    case CongestionStage::FreeFlow: return "FreeFlow";
    case CongestionStage::Undefined: return "Undefined";
  }
  return "Undefined";
}

CongestionStage parse_stage(const std::string& s) {
  for (int i = 0; i < kStageCount; ++i) {
    const auto st = static_cast<CongestionStage>(i);
    if (to_string(st) == s) return st;
  }
  throw ConfigError("unknown congestion stage '" + s + "'");
}

std::array<double, kStageCount> onehot(CongestionStage s) {
  std::array<double, kStageCount> v{};
  v[static_cast<std::size_t>(s)] = 1.0;
  return v;
}

std::vector<double> zone_gaps(const SensingZoneSnapshot& z, double vehicle_length) {
  std::vector<double> g;
  double prev = 0.0;
  for (const auto& e : z.entries) {
    g.push_back(e.rel_position - prev - vehicle_length);
    prev = e.rel_position;
  }
  return g;
}

CongestionStage label_gaps(const std::vector<double>& g, const LabelOptions& opt) {
  if (g.size() < 2) return CongestionStage::Undefined;
  bool inc = true, dec = true;
  for (std::size_t i = 1; i < g.size(); ++i) {
    if (!(g[i] - g[i - 1] > opt.tolerance)) inc = false;
    if (!(g[i - 1] - g[i] > opt.tolerance)) dec = false;
  }
  if (inc) return CongestionStage::Leaving;
  if (dec) return CongestionStage::Forming;
  const bool all_above = std::all_of(g.begin(), g.end(), [&](double x) { return x > opt.gap_threshold; });
  const bool all_below = std::all_of(g.begin(), g.end(), [&](double x) { return x <= opt.gap_threshold; });
  if (all_above) return CongestionStage::FreeFlow;
  if (all_below) return CongestionStage::Congested;
  return CongestionStage::Undefined;
}

CongestionStage label_window(const SensingZoneSnapshot& z, const LabelOptions& opt) {
  return label_gaps(zone_gaps(z, opt.vehicle_length), opt);
}

std::vector<double> zone_features(const SensingZoneSnapshot& z, const FeatureSpec& spec) {
  std::vector<double> f(static_cast<std::size_t>(spec.size()), 0.0);
  const std::size_t n = std::min<std::size_t>(z.entries.size(), static_cast<std::size_t>(spec.max_vehicles));
  const std::size_t mask = 2 * static_cast<std::size_t>(spec.max_vehicles);
  for (std::size_t i = 0; i < n; ++i) {
    f[2 * i] = z.entries[i].rel_position / spec.zone_length;
    f[2 * i + 1] = z.entries[i].rel_velocity / spec.speed_limit;
    f[mask + i] = 1.0;
  }
  return f;
}

SensingZoneSnapshot zone_from_snapshot(const Snapshot& snap, int observer_id, double zone_length) {
  SensingZoneSnapshot z;
  z.zone_length = zone_length;
  std::unordered_map<int, std::size_t> at;
  for (std::size_t i = 0; i < snap.vehicles.size(); ++i) at[snap.vehicles[i].id] = i;
  auto it = at.find(observer_id);
  if (it == at.end()) throw DomainError("zone_from_snapshot: vehicle not in snapshot");
  const auto& me = snap.vehicles[it->second];
  const VehicleState* cur = &me;
  double rel = 0.0;
  for (std::size_t hops = 0; hops < snap.vehicles.size(); ++hops) {
    if (cur->leader_id < 0 || !std::isfinite(cur->gap)) break;
    auto lt = at.find(cur->leader_id);
    if (lt == at.end() || cur->leader_id == observer_id) break;
    const auto& l = snap.vehicles[lt->second];
    rel += cur->gap + l.length;
    if (rel > zone_length) break;
    z.entries.push_back({rel, l.velocity - me.velocity});
    cur = &l;
  }
  return z;
}

CscModel CscModel::create(const FeatureSpec& spec, const std::vector<int>& hidden, Rng& rng) {
  std::vector<int> sizes{spec.size()};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(kStageCount);
  CscModel m;
  m.features = spec;
  m.net = Mlp::random(sizes, rng);
  return m;
}

std::vector<double> CscModel::probabilities(const SensingZoneSnapshot& z) const {
  return softmax(net.forward(zone_features(z, features)));
}

CongestionStage CscModel::forecast(const SensingZoneSnapshot& z) const {
  return static_cast<CongestionStage>(argmax(probabilities(z)));
}

std::string CscModel::to_json() const {
  auto j = net.to_json();
  j["kind"] = "csc";
  j["normalization"] = {{"max_vehicles", features.max_vehicles},
                        {"zone_length", features.zone_length},
                        {"speed_limit", features.speed_limit}};
  j["labels"] = {{"gap_threshold", labels.gap_threshold},
                 {"tolerance", labels.tolerance},
                 {"vehicle_length", labels.vehicle_length}};
  j["classes"] = {"Forming", "Leaving", "Congested", "FreeFlow", "Undefined"};
  return j.dump();
}

CscModel CscModel::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("csc model: ") + e.what());
  }
  CscModel m;
  m.net = Mlp::from_json(j);
  try {
    const auto& n = j.at("normalization");
    m.features.max_vehicles = n.at("max_vehicles").get<int>();
    m.features.zone_length = n.at("zone_length").get<double>();
    m.features.speed_limit = n.at("speed_limit").get<double>();
    if (j.contains("labels")) {
      const auto& l = j["labels"];
      m.labels.gap_threshold = l.at("gap_threshold").get<double>();
      m.labels.tolerance = l.at("tolerance").get<double>();
      m.labels.vehicle_length = l.at("vehicle_length").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("csc model: ") + e.what());
  }
  if (m.net.input_size() != m.features.size() || m.net.output_size() != kStageCount) {
    throw IoError("csc model: layer sizes do not match the feature layout");
  }
  return m;
}

void CscModel::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << to_json() << "\n";
}

CscModel CscModel::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json(ss.str());
}

void Dataset::push(const std::vector<double>& f, int label, int ep) {
  if (n_features == 0) n_features = static_cast<int>(f.size());
  if (static_cast<int>(f.size()) != n_features) throw DomainError("dataset: feature size mismatch");
  x.insert(x.end(), f.begin(), f.end());
  y.push_back(label);
  episode.push_back(ep);
}

std::array<std::size_t, kStageCount> Dataset::class_counts() const {
  std::array<std::size_t, kStageCount> c{};
  for (int v : y) ++c[static_cast<std::size_t>(v)];
  return c;
}

Dataset make_dataset(const std::vector<Trace>& traces, const DatasetOptions& opt) {
  if (opt.forecast_offset < 0) throw ConfigError("dataset: forecast offset must be >= 0");
  Dataset d;
  d.n_features = opt.features.size();
  for (std::size_t ti = 0; ti < traces.size(); ++ti) {
    const auto& tr = traces[ti];
    if (tr.meta.record_stride != 1) throw ConfigError("dataset: traces must be recorded every step");
    if (tr.snapshots.empty()) continue;
    std::vector<int> observers;
    for (const auto& v : tr.snapshots.back().vehicles) {
      if (v.is_rv) observers.push_back(v.id);
    }
    if (observers.empty()) {
      std::vector<int> ids;
      for (const auto& v : tr.snapshots.front().vehicles) ids.push_back(v.id);
      auto rng = make_rng(opt.seed, stream::dataset, ti);
      std::shuffle(ids.begin(), ids.end(), rng);
      ids.resize(std::min<std::size_t>(ids.size(), static_cast<std::size_t>(opt.observers_per_trace)));
      std::sort(ids.begin(), ids.end());
      observers = ids;
    }
    const std::size_t n = tr.snapshots.size();
    const auto off = static_cast<std::size_t>(opt.forecast_offset);
    for (int obs : observers) {
      for (std::size_t s = 0; s + off < n; ++s) {
        const auto& now = tr.snapshots[s];
        if (now.time < opt.t_begin) continue;
        const auto& later = tr.snapshots[s + off];
        auto has = [&](const Snapshot& sn) {
          return std::any_of(sn.vehicles.begin(), sn.vehicles.end(),
                             [&](const VehicleState& v) { return v.id == obs; });
        };
        if (!has(now) || !has(later)) continue;
        const auto z_now = zone_from_snapshot(now, obs, opt.zone_length);
        const auto z_later = zone_from_snapshot(later, obs, opt.zone_length);
        d.push(zone_features(z_now, opt.features), static_cast<int>(label_window(z_later, opt.labels)),
               static_cast<int>(ti));
      }
    }
  }
  return d;
}

namespace {

Dataset subset(const Dataset& d, const std::vector<std::size_t>& rows) {
  Dataset out;
  out.n_features = d.n_features;
  for (auto r : rows) {
    out.x.insert(out.x.end(), d.row(r), d.row(r) + d.n_features);
    out.y.push_back(d.y[r]);
    out.episode.push_back(d.episode[r]);
  }
  return out;
}

}  // namespace

Dataset balance(const Dataset& d, std::uint64_t seed, std::size_t min_class_count) {
  std::array<std::vector<std::size_t>, kStageCount> by;
  for (std::size_t i = 0; i < d.size(); ++i) by[static_cast<std::size_t>(d.y[i])].push_back(i);
  std::size_t target = 0;
  for (const auto& b : by) {
    if (b.size() >= std::max<std::size_t>(min_class_count, 1) && (target == 0 || b.size() < target)) {
      target = b.size();
    }
  }
  auto rng = make_rng(seed, stream::dataset, 0xBA1A);
  std::vector<std::size_t> keep;
  for (auto& b : by) {
    if (b.size() < std::max<std::size_t>(min_class_count, 1)) continue;
    std::shuffle(b.begin(), b.end(), rng);
    keep.insert(keep.end(), b.begin(), b.begin() + static_cast<std::ptrdiff_t>(std::min(target, b.size())));
  }
  std::sort(keep.begin(), keep.end());
  return subset(d, keep);
}

void split_by_episode(const Dataset& d, double test_fraction, std::uint64_t seed, Dataset& train,
                      Dataset& test) {
  std::vector<int> eps(d.episode.begin(), d.episode.end());
  std::sort(eps.begin(), eps.end());
  eps.erase(std::unique(eps.begin(), eps.end()), eps.end());
  auto rng = make_rng(seed, stream::dataset, 0x5E1F);
  std::shuffle(eps.begin(), eps.end(), rng);
  std::size_t n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(eps.size())));
  if (eps.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, eps.size() - 1);
  std::vector<char> is_test(eps.empty() ? 0 : static_cast<std::size_t>(*std::max_element(eps.begin(), eps.end())) + 1, 0);
  for (std::size_t i = 0; i < n_test && i < eps.size(); ++i) is_test[static_cast<std::size_t>(eps[i])] = 1;
  std::vector<std::size_t> tr, te;
  for (std::size_t i = 0; i < d.size(); ++i) {
    (is_test[static_cast<std::size_t>(d.episode[i])] ? te : tr).push_back(i);
  }
  train = subset(d, tr);
  test = subset(d, te);
}

double loss_and_gradient(const Mlp& net, const Dataset& d, const std::vector<std::size_t>& rows,
                         std::vector<double>& grad) {
  if (d.n_features != net.input_size()) throw DomainError("loss: feature size does not match network");
  grad.assign(net.params().size(), 0.0);
  if (rows.empty()) return 0.0;
  const double inv = 1.0 / static_cast<double>(rows.size());
  double loss = 0.0;
  Mlp::Cache cache;
  std::vector<double> d_out(static_cast<std::size_t>(net.output_size()));
  for (auto r : rows) {
    const auto p = softmax(net.forward(d.row(r), cache));
    const auto y = static_cast<std::size_t>(d.y[r]);
    loss -= std::log(std::max(p[y], 1e-300)) * inv;
    for (std::size_t k = 0; k < p.size(); ++k) d_out[k] = (p[k] - (k == y ? 1.0 : 0.0)) * inv;
    net.backward(cache, d_out, grad);
  }
  return loss;
}

double accuracy(const Mlp& net, const Dataset& d) {
  if (d.size() == 0) return 0.0;
  std::size_t ok = 0;
  Mlp::Cache cache;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (static_cast<int>(argmax(net.forward(d.row(i), cache))) == d.y[i]) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(d.size());
}

TrainResult train_classifier(Mlp& net, const Dataset& train, const Dataset& test,
                             const TrainOptions& opt) {
  if (train.size() == 0) throw ConfigError("train: empty dataset");
  if (train.n_features != net.input_size()) throw DomainError("train: feature size does not match network");
  if (opt.batch_size <= 0 || opt.epochs < 0) throw ConfigError("train: invalid batch size or epochs");
  TrainResult res;
  MomentumSgd sgd(opt.learning_rate, opt.momentum);
  auto rng = make_rng(opt.seed, stream::training, 0xC5C);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad;
  std::vector<std::size_t> batch;
  for (int e = 0; e < opt.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t end = std::min(order.size(), s + static_cast<std::size_t>(opt.batch_size));
      batch.assign(order.begin() + static_cast<std::ptrdiff_t>(s), order.begin() + static_cast<std::ptrdiff_t>(end));
      const double l = loss_and_gradient(net, train, batch, grad);
      if (!std::isfinite(l)) throw SimulationError("train: loss diverged at epoch " + std::to_string(e));
      total += l * static_cast<double>(batch.size());
      sgd.step(net.params(), grad);
    }
    res.epoch_loss.push_back(total / static_cast<double>(train.size()));
  }
  res.train_accuracy = accuracy(net, train);
  res.test_accuracy = accuracy(net, test);
  return res;
}

std::vector<Trace> generate_csc_traces(const std::vector<double>& densities,
                                       const std::vector<std::uint64_t>& seeds, int steps) {
  std::vector<Trace> out;
  for (double k : densities) {
    for (auto seed : seeds) {
      EpisodeSchedule sch;
      sch.warmup_steps = 0;
      sch.horizon_steps = steps;
      sch.measurement_window_s = std::min(sch.measurement_window_s, steps * sch.dt);
      sch.record_stride = 1;
      out.push_back(run_episode(RingScenario::from_density(k), FleetSpec{}, sch, seed));
    }
  }
  return out;
}

void write_dataset_csv(const Dataset& d, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write '" + path + "'");
  for (int i = 0; i < d.n_features; ++i) f << "f" << i << ",";
  f << "label,episode\n";
  char buf[32];
  for (std::size_t r = 0; r < d.size(); ++r) {
    for (int i = 0; i < d.n_features; ++i) {
      std::snprintf(buf, sizeof buf, "%.9g,", d.row(r)[i]);
      f << buf;
    }
    f << to_string(static_cast<CongestionStage>(d.y[r])) << "," << d.episode[r] << "\n";
  }
}

}  // namespace mtc

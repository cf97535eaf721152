#include "mtc/mlp.hpp"

#include <algorithm>
#include <cmath>

namespace mtc {

Mlp::Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw ConfigError("mlp: need at least input and output sizes");
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] <= 0 || sizes_[l + 1] <= 0) throw ConfigError("mlp: layer sizes must be > 0");
    w_off_.push_back(off);
    off += static_cast<std::size_t>(sizes_[l]) * static_cast<std::size_t>(sizes_[l + 1]);
    b_off_.push_back(off);
    off += static_cast<std::size_t>(sizes_[l + 1]);
  }
  params_.assign(off, 0.0);
}

Mlp Mlp::random(std::vector<int> sizes, Rng& rng) {
  Mlp m(std::move(sizes));
  for (std::size_t l = 0; l < m.layers(); ++l) {
    const int in = m.sizes_[l], out = m.sizes_[l + 1];
    const double lim = std::sqrt(6.0 / in);
    std::uniform_real_distribution<double> u(-lim, lim);
    double* w = m.weights(l);
    for (int k = 0; k < in * out; ++k) w[k] = u(rng);
  }
  return m;
}

std::vector<double> Mlp::forward(const std::vector<double>& x) const {
  if (static_cast<int>(x.size()) != input_size()) {
    throw DomainError("mlp: expected " + std::to_string(input_size()) + " inputs, got " +
                      std::to_string(x.size()));
  }
  Cache c;
  return forward(x.data(), c);
}

std::vector<double> Mlp::forward(const double* x, Cache& cache) const {
  const std::size_t L = layers();
  cache.acts.resize(L + 1);
  cache.acts[0].assign(x, x + sizes_[0]);
  for (std::size_t l = 0; l < L; ++l) {
    const int in = sizes_[l], out = sizes_[l + 1];
    const double* w = weights(l);
    const double* b = biases(l);
    const auto& a = cache.acts[l];
    auto& z = cache.acts[l + 1];
    z.assign(static_cast<std::size_t>(out), 0.0);
    for (int o = 0; o < out; ++o) {
      double s = b[o];
      const double* row = w + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) s += row[i] * a[static_cast<std::size_t>(i)];
      z[static_cast<std::size_t>(o)] = (l + 1 < L) ? std::max(0.0, s) : s;
    }
  }
  return cache.acts[L];
}

void Mlp::backward(const Cache& cache, const std::vector<double>& d_out,
                   std::vector<double>& grad) const {
  if (grad.size() != params_.size()) grad.assign(params_.size(), 0.0);
  std::vector<double> delta = d_out;
  for (std::size_t l = layers(); l-- > 0;) {
    const int in = sizes_[l], out = sizes_[l + 1];
    const auto& a = cache.acts[l];
    double* gw = grad.data() + w_off_[l];
    double* gb = grad.data() + b_off_[l];
    const double* w = weights(l);
    for (int o = 0; o < out; ++o) {
      const double d = delta[static_cast<std::size_t>(o)];
      gb[o] += d;
      if (d == 0.0) continue;
      double* grow = gw + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) grow[i] += d * a[static_cast<std::size_t>(i)];
    }
    if (l == 0) break;
    std::vector<double> prev(static_cast<std::size_t>(in), 0.0);
    for (int o = 0; o < out; ++o) {
      const double d = delta[static_cast<std::size_t>(o)];
      if (d == 0.0) continue;
      const double* row = w + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) prev[static_cast<std::size_t>(i)] += d * row[i];
    }
    // Rectifier derivative: zero where the activation was clipped.
    for (int i = 0; i < in; ++i) {
      if (a[static_cast<std::size_t>(i)] <= 0.0) prev[static_cast<std::size_t>(i)] = 0.0;
    }
    delta.swap(prev);
  }
}

nlohmann::ordered_json Mlp::to_json() const {
  nlohmann::ordered_json j;
  j["layer_sizes"] = sizes_;
  auto W = nlohmann::ordered_json::array();
  auto B = nlohmann::ordered_json::array();
  for (std::size_t l = 0; l < layers(); ++l) {
    const std::size_t nw = static_cast<std::size_t>(sizes_[l]) * sizes_[l + 1];
    W.push_back(std::vector<double>(weights(l), weights(l) + nw));
    B.push_back(std::vector<double>(biases(l), biases(l) + sizes_[l + 1]));
  }
  j["weights"] = std::move(W);
  j["biases"] = std::move(B);
  return j;
}

Mlp Mlp::from_json(const nlohmann::json& j) {
  try {
    Mlp m(j.at("layer_sizes").get<std::vector<int>>());
    const auto& W = j.at("weights");
    const auto& B = j.at("biases");
    if (W.size() != m.layers() || B.size() != m.layers()) {
      throw IoError("mlp json: layer count mismatch");
    }
    for (std::size_t l = 0; l < m.layers(); ++l) {
      const auto w = W[l].get<std::vector<double>>();
      const auto b = B[l].get<std::vector<double>>();
      if (w.size() != static_cast<std::size_t>(m.sizes_[l]) * m.sizes_[l + 1] ||
          b.size() != static_cast<std::size_t>(m.sizes_[l + 1])) {
        throw IoError("mlp json: shape mismatch in layer " + std::to_string(l));
      }
      std::copy(w.begin(), w.end(), m.weights(l));
      std::copy(b.begin(), b.end(), m.biases(l));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("mlp json: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(std::string("mlp json: ") + e.what());
  }
}

std::vector<double> softmax(const std::vector<double>& z) {
  std::vector<double> p(z.size());
  if (z.empty()) return p;
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - m));
  for (auto& x : p) x /= s;
  return p;
}

std::size_t argmax(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

void MomentumSgd::step(std::vector<double>& params, const std::vector<double>& grad) {
  if (vel_.size() != params.size()) vel_.assign(params.size(), 0.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    vel_[i] = mu_ * vel_[i] - lr_ * grad[i];
    params[i] += vel_[i];
  }
}

void Adam::step(std::vector<double>& params, const std::vector<double>& grad) {
  if (m_.size() != params.size()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
    t_ = 0;
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

}  // namespace mtc

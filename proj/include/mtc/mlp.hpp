#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "mtc/common.hpp"

namespace mtc {

/// Dense network: rectifier hidden layers, linear output. All parameters
/// live in one flat vector so optimisers and gradient checks can treat the
/// network as a point in R^n.
class Mlp {
 public:
  Mlp() = default;
  /// Zero-initialised network with the given layer sizes (input first).
  explicit Mlp(std::vector<int> sizes);

  /// He-uniform weights, zero biases.
  static Mlp random(std::vector<int> sizes, Rng& rng);

  const std::vector<int>& sizes() const { return sizes_; }
  int input_size() const { return sizes_.empty() ? 0 : sizes_.front(); }
  int output_size() const { return sizes_.empty() ? 0 : sizes_.back(); }
  std::size_t layers() const { return sizes_.size() - 1; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  /// Row-major (out x in) weight of layer l.
  double* weights(std::size_t l) { return params_.data() + w_off_[l]; }
  const double* weights(std::size_t l) const { return params_.data() + w_off_[l]; }
  double* biases(std::size_t l) { return params_.data() + b_off_[l]; }
  const double* biases(std::size_t l) const { return params_.data() + b_off_[l]; }

  /// Per-layer activations of one forward pass; acts[0] is the input.
  struct Cache {
    std::vector<std::vector<double>> acts;
  };

  std::vector<double> forward(const std::vector<double>& x) const;
  std::vector<double> forward(const double* x, Cache& cache) const;

  /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
  void backward(const Cache& cache, const std::vector<double>& d_out,
                std::vector<double>& grad) const;

  nlohmann::ordered_json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

 private:
  std::vector<int> sizes_;
  std::vector<double> params_;
  std::vector<std::size_t> w_off_, b_off_;
};

/// Numerically stable softmax.
std::vector<double> softmax(const std::vector<double>& logits);

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(const std::vector<double>& v);

/// SGD with classical momentum.
class MomentumSgd {
 public:
  MomentumSgd(double lr, double momentum) : lr_(lr), mu_(momentum) {}
  void step(std::vector<double>& params, const std::vector<double>& grad);

 private:
  double lr_, mu_;
  std::vector<double> vel_;
};

/// Adam with the usual bias correction.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
  void step(std::vector<double>& params, const std::vector<double>& grad);

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace mtc

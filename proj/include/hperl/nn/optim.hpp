#pragma once

#include <string>
#include <vector>

#include "hperl/nn/tensor.hpp"

namespace hperl::nn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Update rules follow the usual deep-learning library conventions, so a step
// is reproducible by hand:
//   Adam:    m = b1 m + (1-b1) g;  v = b2 v + (1-b2) g^2;
//            p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
//   RMSProp: v = a v + (1-a) g^2;  p -= lr * g / (sqrt(v) + eps)
class Optimizer {
 public:
  enum class Kind { adam, rmsprop };

  Optimizer(Kind kind, std::vector<NamedTensor> params);

  // Applies one update from the accumulated gradients (scaled by grad_scale).
  void step(double lr, double grad_scale = 1.0);
  void zero_grad();

  Kind kind() const { return kind_; }
  long long steps() const { return t_; }
  const std::vector<NamedTensor>& params() const { return params_; }

  // Moment buffers, exposed for checkpointing. Each is per-parameter.
  std::vector<std::vector<double>>& first_moment() { return m_; }
  std::vector<std::vector<double>>& second_moment() { return v_; }
  void set_steps(long long t) { t_ = t; }

  double beta1 = 0.9, beta2 = 0.999, alpha = 0.99, eps = 1e-8;

 private:
  Kind kind_;
  std::vector<NamedTensor> params_;
  std::vector<std::vector<double>> m_, v_;
  long long t_ = 0;
};

}  // namespace hperl::nn

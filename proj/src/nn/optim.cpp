#include "hperl/nn/optim.hpp"

#include <cmath>

namespace hperl::nn {

Optimizer::Optimizer(Kind kind, std::vector<NamedTensor> params)
    : kind_(kind), params_(std::move(params)) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void Optimizer::step(double lr, double grad_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].tensor;
    if (!p.has_grad()) continue;
    auto& val = p.value();
    const auto& g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < val.size(); ++j) {
      const double gj = g[j] * grad_scale;
      if (kind_ == Kind::adam) {
        m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
        v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
        val[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
      } else {
        v[j] = alpha * v[j] + (1.0 - alpha) * gj * gj;
        val[j] -= lr * gj / (std::sqrt(v[j]) + eps);
      }
    }
  }
}

}  // namespace hperl::nn

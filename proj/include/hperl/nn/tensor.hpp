#pragma once

// Dense double tensors with reverse-mode differentiation.
//
// A Tensor is a handle to a graph node. Ops record their inputs and a backward
// closure when gradients are enabled and at least one input requires them.
// Values are checked after every op; a NaN or Inf raises NonFiniteError naming
// the layer that produced it.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hperl/types.hpp"

namespace hperl::nn {

class NonFiniteError : public Error {
 public:
  explicit NonFiniteError(const std::string& layer)
      : Error("non-finite value produced by layer '" + layer + "'"), layer_(layer) {}
  const std::string& layer() const { return layer_; }

 private:
  std::string layer_;
};

using Shape = std::vector<int>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false, std::string name = {});
  static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false,
                     std::string name = {});
  static Tensor scalar(double v);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t size() const { return node_->value.size(); }
  std::vector<double>& value() { return node_->value; }
  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& grad() { return node_->ensure_grad(); }
  bool has_grad() const { return !node_->grad.empty(); }
  double item() const;
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }
  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }

  void zero_grad();

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording for its lifetime (per thread).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Builds an op result. Throws NonFiniteError if `values` holds NaN/Inf. The
// backward closure is kept only when recording and some input requires grad.
Tensor make_result(const Shape& shape, std::vector<double> values, const std::string& name,
                   std::vector<Tensor> inputs, std::function<void(Node&)> backward);

// Seeds d(loss)/d(loss) = 1 for a single-element tensor and propagates.
void backward(const Tensor& loss);

}  // namespace hperl::nn

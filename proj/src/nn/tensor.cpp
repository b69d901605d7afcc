#include "hperl/nn/tensor.hpp"

#include <cmath>
#include <unordered_set>

namespace hperl::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw InvalidArgument("negative tensor extent");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad, std::string name) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->value.assign(numel(shape), 0.0);
  n->requires_grad = requires_grad;
  n->name = std::move(name);
  return Tensor(n);
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad,
                    std::string name) {
  if (values.size() != numel(shape)) {
    throw InvalidArgument("tensor " + name + ": " + std::to_string(values.size()) +
                          " values for shape " + shape_str(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  n->name = std::move(name);
  return Tensor(n);
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

double Tensor::item() const {
  if (size() != 1) throw InvalidArgument("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor make_result(const Shape& shape, std::vector<double> values, const std::string& name,
                   std::vector<Tensor> inputs, std::function<void(Node&)> backward_fn) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NonFiniteError(name);
  }
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->value = std::move(values);
  n->name = name;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs) needs = needs || (t.defined() && t.requires_grad());
  }
  if (needs) {
    n->requires_grad = true;
    for (auto& t : inputs) n->parents.push_back(t.ptr());
    n->backward = std::move(backward_fn);
  }
  return Tensor(n);
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) throw InvalidArgument("backward() needs a single-element loss");
  if (!loss.requires_grad()) return;
  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&loss.node(), 0}};
  seen.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node().ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward || n->grad.empty()) continue;
    for (auto& p : n->parents) {
      if (p->requires_grad) p->ensure_grad();
    }
    n->backward(*n);
  }
}

}  // namespace hperl::nn

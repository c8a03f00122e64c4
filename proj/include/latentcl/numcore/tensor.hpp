#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "latentcl/numcore/errors.hpp"

namespace latentcl {

using Shape = std::vector<std::size_t>;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads self.grad and accumulates into parents' grads.
  std::function<void(Node& self)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

inline thread_local bool grad_enabled = true;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Rank <= 2 array of doubles with an optional gradient slot.
///
/// Copies share the underlying node; values are immutable once an op has
/// consumed them, only leaf parameters are updated in place by optimizers.
/// A rank-1 tensor of length n behaves as a single row (1 x n) wherever a
/// row-major matrix view is needed.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (shape.size() > 2) throw DimensionError("tensor rank exceeds 2: " + shape_str(shape));
    if (detail::numel_of(shape) != data.size()) {
      throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                           shape_str(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = detail::numel_of(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor scalar(double v) { return from({}, {v}); }
  static Tensor vector(std::vector<double> v) {
    const auto n = v.size();
    return from({n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return from({rows, cols}, std::move(v));
  }
  static Tensor parameter(Shape shape, std::vector<double> data) {
    return from(std::move(shape), std::move(data), true);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t rows() const { return rank() == 2 ? node_->shape[0] : 1; }
  std::size_t cols() const {
    if (rank() == 0) return 1;
    return rank() == 1 ? node_->shape[0] : node_->shape[1];
  }
  bool is_scalar() const { return numel() == 1 && rank() <= 1; }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  const std::vector<double>& values() const { return node_->data; }
  double item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Zero-filled view when no gradient has been accumulated yet.
  std::span<const double> grad() const {
    node_->grad_buffer();
    return node_->grad;
  }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  // Value copy cut off from the graph.
  Tensor detach() const { return from(shape(), node_->data, false); }

  /// Accumulates d(this)/d(t) into every participating tensor's grad.
  void backward() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_op_result(Shape, std::vector<double>, std::vector<Tensor>,
                               std::function<void(detail::Node&)>);

  std::shared_ptr<detail::Node> node_;
};

// Builds an op output; the backward closure is only kept when some parent needs gradients.
inline Tensor make_op_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                             std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (detail::grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor& p) { return p.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node_ptr());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

inline void Tensor::backward() const {
  if (!is_scalar()) throw ContractError("backward() requires a scalar loss, got " + shape_str(shape()));
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

}  // namespace latentcl

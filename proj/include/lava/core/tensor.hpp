// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense row-major f64 tensor with define-by-run reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Nodes created by ops keep
// their inputs alive through the backward closure, so the graph lives exactly
// as long as the root that was computed from it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lava/core/error.hpp"

namespace lava {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(std::span<const double> out_grad)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  bool consumed = false;     // backward already run from this node as root
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  BackwardFn backward;

  bool is_leaf() const { return parents.empty(); }

  std::span<double> grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline thread_local bool grad_mode_enabled = true;

// Test hook: when set, the gradient flowing into nodes produced by this op is
// scaled by 1.01 before being propagated. Used to prove the gradient checker
// detects a broken rule.
inline thread_local std::string faulty_op;

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_enabled; }

/// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
  ~NoGradGuard() { detail::grad_mode_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Scoped activation of the corrupted-gradient test hook for one op name.
class FaultInjection {
 public:
  explicit FaultInjection(std::string op) : previous_(detail::faulty_op) {
    detail::faulty_op = std::move(op);
  }
  ~FaultInjection() { detail::faulty_op = previous_; }
  FaultInjection(const FaultInjection&) = delete;
  FaultInjection& operator=(const FaultInjection&) = delete;

 private:
  std::string previous_;
};

class Tensor {
 public:
  Tensor() : Tensor(Shape{0}, std::vector<double>{}) {}

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw NumericError("non-finite value in tensor data");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false) {
    return Tensor(Shape{rows, cols}, std::move(values), requires_grad);
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad = false) {
    const std::size_t cols = rows.size() == 0 ? 0 : rows.begin()->size();
    std::vector<double> values;
    for (const auto& row : rows) {
      if (row.size() != cols) throw DimensionError("matrix rows have different lengths");
      values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor(Shape{rows.size(), cols}, std::move(values), requires_grad);
  }

  static Tensor vector(std::vector<double> values, bool requires_grad = false) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values), requires_grad);
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const {
    if (i >= rank()) throw DimensionError("dimension index out of range for " + shape_str(shape()));
    return node_->shape[i];
  }
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  std::span<const double> data() const { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  double item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf(); }
  const char* op_name() const { return node_->op; }

  bool has_grad() const { return !node_->grad.empty(); }

  /// Accumulated gradient; all zeros if nothing has been accumulated yet.
  std::vector<double> grad() const {
    if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
    return node_->grad;
  }

  std::span<const double> grad_view() const { return node_->grad; }

  void zero_grad() { node_->grad.clear(); }

  /// Writable storage; only leaves (parameters, inputs) may be mutated.
  std::span<double> mutable_data() {
    if (!is_leaf()) throw GraphError("only leaf tensors may be mutated in place");
    return node_->value;
  }

  Tensor clone(bool requires_grad) const {
    return Tensor(shape(), node_->value, requires_grad);
  }

  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  /// Reverse-mode sweep from this scalar root. Leaves accumulate into their
  /// grad buffers; intermediate buffers are released as the sweep passes.
  void backward() const {
    if (numel() != 1) {
      throw GraphError("backward() requires a scalar root, got shape " + shape_str(shape()));
    }
    if (node_->consumed) {
      throw GraphError("backward() already ran on this graph; call reset_backward() first");
    }
    if (!node_->requires_grad) {
      throw GraphError("backward() on a tensor that does not require grad");
    }
    const auto order = topological_order();
    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node& n = **it;
      if (n.is_leaf() || n.grad.empty()) continue;
      if (!detail::faulty_op.empty() && detail::faulty_op == n.op) {
        for (double& g : n.grad) g *= 1.01;
      }
      n.backward(n.grad);
      n.grad.clear();
      n.grad.shrink_to_fit();
    }
    node_->consumed = true;
  }

  /// Clears the consumed flag and zeroes the gradients of every leaf reachable
  /// from this root so backward() may run again.
  void reset_backward() const {
    for (const auto& n : topological_order()) {
      if (n->is_leaf()) n->grad.clear();
    }
    node_->consumed = false;
  }

  /// Leaves reachable from this root that require grad, in discovery order.
  std::vector<Tensor> leaves() const {
    std::vector<Tensor> out;
    for (const auto& n : topological_order()) {
      if (n->is_leaf() && n->requires_grad) out.push_back(Tensor(n));
    }
    return out;
  }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Internal: used by op implementations.
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
  const detail::NodePtr& node() const { return node_; }

 private:
  // Post-order DFS: every node appears after all of its parents.
  std::vector<detail::NodePtr> topological_order() const {
    std::vector<detail::NodePtr> order;
    std::unordered_set<const detail::Node*> visited;
    std::vector<std::pair<detail::NodePtr, std::size_t>> stack;
    stack.emplace_back(node_, 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        const detail::NodePtr& p = n->parents[next++];
        if (p->requires_grad && visited.insert(p.get()).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    return order;
  }

  detail::NodePtr node_;
};

namespace detail {

inline void check_finite(const char* op, std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

/// Builds the output node of an op. The backward closure is kept only when
/// grad mode is on and at least one input requires grad.
inline Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                          std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
  check_finite(op, value);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (grad_mode_enabled) {
    for (const Tensor* in : inputs) {
      if (in->requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
      for (const Tensor* in : inputs) {
        if (in->requires_grad()) node->parents.push_back(in->node());
      }
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

/// Same as make_result for ops with a variable number of inputs.
inline Tensor make_result_n(const char* op, Shape shape, std::vector<double> value,
                            const std::vector<Tensor>& inputs, BackwardFn backward) {
  check_finite(op, value);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (grad_mode_enabled) {
    for (const Tensor& in : inputs) {
      if (in.requires_grad()) {
        node->requires_grad = true;
        node->parents.push_back(in.node());
      }
    }
    if (node->requires_grad) node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

/// Gradient buffer of an input, or an empty span when it needs none.
inline std::span<double> grad_sink(const Tensor& t) {
  if (!t.requires_grad()) return {};
  return t.node()->grad_buffer();
}

}  // namespace detail
}  // namespace lava

// Copyright (c) 2026 The Bokeh Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "bokeh/tensor.hpp"

namespace bokeh {

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents.
  std::function<void(Node&)> backward_fn;

  Tensor<T>& ensure_grad() {
    if (grad.empty()) grad = Tensor<T>::zeros(value.shape());
    return grad;
  }
};

/// Handle to a node of the differentiation graph. Copies share the node.
template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  /// Leaf holding a trainable or probe value.
  static Var leaf(Tensor<T> value, bool requires_grad = true) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }
  static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  bool defined() const { return static_cast<bool>(node_); }
  explicit operator bool() const { return defined(); }

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->ensure_grad(); }

  /// Sets an allocated gradient to zero; unallocated gradients stay absent.
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(T{0});
  }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Whether new results record their inputs for backward on this thread.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

/// Disables graph recording for its lifetime (inference, finite differences).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->is_leaf = false;
  if (!grad_mode()) return Var<T>(std::move(n));
  for (auto& in : inputs) {
    if (in.requires_grad()) n->requires_grad = true;
    n->parents.push_back(in.ptr());
  }
  if (n->requires_grad) n->backward_fn = std::move(backward);
  return Var<T>(std::move(n));
}

}  // namespace detail

/// Reverse-mode sweep from a scalar root. Interior gradients are rebuilt on
/// every call; leaf gradients accumulate, so callers zero them between steps.
template <class T>
void backward(const Var<T>& root) {
  if (!root.defined() || root.value().size() != 1)
    throw ShapeError("backward: root must be scalar, got " +
                     (root.defined() ? to_string(root.shape()) : "undefined"));
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node<T>* n : order)
    if (!n->is_leaf) n->grad = Tensor<T>::zeros(n->value.shape());
  root.node()->ensure_grad()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->is_leaf && n->backward_fn) n->backward_fn(*n);
  }
}

/// Multiply-accumulate tally of conv2d and matmul forwards on this thread.
/// Used to cross-check the analytic MAC count.
struct OpCounters {
  std::uint64_t macs = 0;
  bool enabled = false;
};

inline OpCounters& op_counters() {
  thread_local OpCounters c;
  return c;
}

inline void count_macs_tally(std::uint64_t n) {
  auto& c = op_counters();
  if (c.enabled) c.macs += n;
}

}  // namespace bokeh

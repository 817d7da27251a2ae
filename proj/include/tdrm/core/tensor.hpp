#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "tdrm/core/shape.hpp"

namespace tdrm {

// Thread-local switch for taping. Ops built while disabled carry no graph.
inline bool& grad_mode_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode_enabled()) { grad_mode_enabled() = false; }
  ~NoGradGuard() { grad_mode_enabled() = prev; }
};

template <typename S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;
  int64_t grad_epoch = -1;   // epoch of the backward pass that filled `grad`
  int64_t visit_epoch = -1;  // traversal bookkeeping
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void(Node<S>&)> backward_fn;

  inline static int64_t epoch_counter = 0;
};

// Value-semantics handle over a shared tape node. Copies alias the same node.
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<S> data) {
    TDRM_CHECK(numel(shape) == static_cast<int64_t>(data.size()),
               "constant: data size does not match shape " + shape_str(shape));
    return from_parts(std::move(shape), std::move(data), false);
  }

  static Tensor zeros(Shape shape) {
    std::vector<S> d(static_cast<size_t>(numel(shape)), S(0));
    return from_parts(std::move(shape), std::move(d), false);
  }

  static Tensor full(Shape shape, S v) {
    std::vector<S> d(static_cast<size_t>(numel(shape)), v);
    return from_parts(std::move(shape), std::move(d), false);
  }

  static Tensor scalar(S v) { return constant({1}, {v}); }

  // Trainable leaf.
  static Tensor leaf(Shape shape, std::vector<S> data) {
    TDRM_CHECK(numel(shape) == static_cast<int64_t>(data.size()),
               "leaf: data size does not match shape " + shape_str(shape));
    return from_parts(std::move(shape), std::move(data), true);
  }

  static Tensor from_node(std::shared_ptr<Node<S>> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t dim(int i) const {
    if (i < 0) i += rank();
    TDRM_CHECK(i >= 0 && i < rank(), "dim index out of range");
    return node_->shape[i];
  }
  int64_t size() const { return numel(node_->shape); }

  const std::vector<S>& value() const { return node_->value; }
  // In-place mutation; meant for leaves (optimizer updates, perturbations).
  std::vector<S>& raw_value() { return node_->value; }

  bool requires_grad() const { return node_ && node_->requires_grad; }

  S item() const {
    TDRM_CHECK(size() == 1, "item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  const std::vector<S>& grad() const { return node_->grad; }
  bool grad_fresh(int64_t epoch) const { return node_ && node_->grad_epoch == epoch; }

  std::shared_ptr<Node<S>> node() const { return node_; }

  // Reverse pass from this (scalar-seeded with ones). Grads of every node
  // reached are zeroed first, then filled; returns the epoch stamp so callers
  // can tell fresh grads from stale ones.
  int64_t backward() const {
    TDRM_CHECK(node_ && node_->requires_grad, "backward on a tensor without grad");
    int64_t epoch = ++Node<S>::epoch_counter;
    std::vector<Node<S>*> topo;
    std::vector<std::pair<Node<S>*, size_t>> stack;
    node_->visit_epoch = epoch;
    stack.push_back({node_.get(), 0});
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        Node<S>* p = n->parents[i++].get();
        if (p->requires_grad && p->visit_epoch != epoch) {
          p->visit_epoch = epoch;
          stack.push_back({p, 0});
        }
      } else {
        topo.push_back(n);
        stack.pop_back();
      }
    }
    for (Node<S>* n : topo) {
      n->grad.assign(n->value.size(), S(0));
      n->grad_epoch = epoch;
    }
    std::fill(node_->grad.begin(), node_->grad.end(), S(1));
    // topo has parents before children; walk back from the root.
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
    return epoch;
  }

 private:
  static Tensor from_parts(Shape shape, std::vector<S> data, bool requires_grad) {
    auto n = std::make_shared<Node<S>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

  std::shared_ptr<Node<S>> node_;
};

// Glue for op implementations: build a result node wired to its parents.
// The backward fn receives the result node; parents' grads are accumulated
// through accum_into (which skips parents that do not require grad).
template <typename S>
Tensor<S> make_op(Shape shape, std::vector<S> value, std::vector<Tensor<S>> parents,
                  std::function<void(Node<S>&)> backward_fn) {
  auto n = std::make_shared<Node<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (grad_mode_enabled()) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    if (rg) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (auto& p : parents) n->parents.push_back(p.node());
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor<S>::from_node(std::move(n));
}

template <typename S>
bool wants_grad(const Node<S>& n, size_t parent_index) {
  return n.parents[parent_index]->requires_grad;
}

template <typename S>
std::vector<S>& parent_grad(Node<S>& n, size_t parent_index) {
  return n.parents[parent_index]->grad;
}

template <typename S>
const std::vector<S>& parent_value(const Node<S>& n, size_t parent_index) {
  return n.parents[parent_index]->value;
}

}  // namespace tdrm

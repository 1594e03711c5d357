// Reverse-mode gradient tape.
//
// Every value flowing through a differentiable computation is a Var: a shared
// handle to an immutable Tensor plus, when it depends on a trainable leaf, the
// index of its node on the Tape. Nodes are appended in execution order, which
// is already a topological order, so backward() walks them once in reverse.
//
// Values that do not depend on any trainable leaf never get a node; their
// storage is released as soon as the last Var referencing it goes away. That
// keeps inference (no trainable leaves) at constant tape size.
#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "hyhdr/errors.hpp"
#include "hyhdr/tensor.hpp"

namespace hyhdr {

template <class T>
class Tape;

template <class T>
class Var {
 public:
  static constexpr std::size_t kNoNode = std::numeric_limits<std::size_t>::max();

  Var() = default;
  Var(Tape<T>* tape, std::shared_ptr<const Tensor<T>> value, std::size_t node)
      : tape_(tape), value_(std::move(value)), node_(node) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  const Tensor<T>& value() const { return *value_; }
  const std::shared_ptr<const Tensor<T>>& shared_value() const { return value_; }
  const Shape& dims() const { return value_->dims(); }
  std::size_t size() const { return value_->size(); }
  std::size_t node() const noexcept { return node_; }
  bool requires_grad() const noexcept { return node_ != kNoNode; }

  /// Gradient accumulated by the last backward(); zeros if none reached this value.
  Tensor<T> grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::shared_ptr<const Tensor<T>> value_;
  std::size_t node_ = kNoNode;
};

template <class T>
class Tape {
 public:
  /// Called during backward with the node's output value and its gradient.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out, const Tensor<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Non-differentiable input.
  Var<T> constant(Tensor<T> value) {
    check_finite("constant", value);
    return Var<T>(this, std::make_shared<const Tensor<T>>(std::move(value)), Var<T>::kNoNode);
  }

  /// Trainable leaf; gradients accumulate into it.
  Var<T> variable(Tensor<T> value) {
    check_finite("variable", value);
    auto shared = std::make_shared<const Tensor<T>>(std::move(value));
    nodes_.push_back(Node{"leaf", shared, {}, nullptr});
    return Var<T>(this, std::move(shared), nodes_.size() - 1);
  }

  /// Records the result of an op. When no input requires a gradient the
  /// backward function is dropped and no node is created.
  Var<T> record(const char* op, Tensor<T> value, bool needs_grad, BackwardFn fn) {
    check_finite(op, value);
    auto shared = std::make_shared<const Tensor<T>>(std::move(value));
    if (!needs_grad) return Var<T>(this, std::move(shared), Var<T>::kNoNode);
    nodes_.push_back(Node{op, shared, {}, std::move(fn)});
    return Var<T>(this, std::move(shared), nodes_.size() - 1);
  }

  /// Gradient buffer of a node, zero-initialised on first access.
  Tensor<T>& grad(std::size_t node) {
    Node& n = nodes_.at(node);
    if (n.grad.empty()) n.grad = Tensor<T>(n.value->dims());
    return n.grad;
  }

  bool has_grad(std::size_t node) const {
    return node < nodes_.size() && !nodes_[node].grad.empty();
  }

  /// Reverse sweep from a scalar root. Each reachable node runs exactly once.
  void backward(const Var<T>& root) {
    if (root.size() != 1) {
      throw ShapeError("backward root must be a scalar, got " + shape_str(root.dims()));
    }
    visits_ = 0;
    if (!root.requires_grad()) return;
    grad(root.node()).fill(T(1));
    for (std::size_t i = root.node() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      ++visits_;
      n.backward(*this, *n.value, n.grad);
    }
  }

  void zero_grad() {
    for (Node& n : nodes_) n.grad = Tensor<T>();
  }

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t last_backward_visits() const noexcept { return visits_; }
  const char* op_name(std::size_t node) const { return nodes_.at(node).op; }

  static void check_finite(const char* op, const Tensor<T>& value) {
    if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
  }

 private:
  struct Node {
    const char* op;
    std::shared_ptr<const Tensor<T>> value;
    Tensor<T> grad;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

template <class T>
Tensor<T> Var<T>::grad() const {
  if (requires_grad() && tape_->has_grad(node_)) return tape_->grad(node_);
  return Tensor<T>(dims());
}

}  // namespace hyhdr

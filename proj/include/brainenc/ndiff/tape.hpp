#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "brainenc/ndiff/tensor.hpp"

namespace brainenc::nd {

/// A named trainable (or frozen) tensor that outlives any single tape.
/// Gradients from every tape that references it accumulate into `grad`.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) {}

  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

template <typename T>
class Tape;

/// Handle to a node on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
};

/// Reverse-mode computation record. Single-threaded; one tape per forward
/// pass. Nodes are appended in evaluation order, so reverse index order is a
/// valid topological order for backward.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) {
    nodes_.push_back(Node{std::move(value), {}, false, nullptr, {}});
    return {this, nodes_.size() - 1};
  }

  /// Leaf bound to a parameter. Frozen parameters behave as constants.
  Var<T> param(Parameter<T>& p) {
    nodes_.push_back(Node{p.value, {}, p.trainable, p.trainable ? &p : nullptr, {}});
    return {this, nodes_.size() - 1};
  }

  /// Leaf that receives a gradient but is not bound to a parameter.
  Var<T> variable(Tensor<T> value) {
    nodes_.push_back(Node{std::move(value), {}, true, nullptr, {}});
    return {this, nodes_.size() - 1};
  }

  /// Appends an interior node. `fn` reads grad(self) and accumulates into the
  /// parents' gradients; it is dropped when no parent needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
    bool needs = false;
    for (const auto& p : parents) {
      if (p.tape != this) throw ArgumentError("operands belong to different tapes");
      needs = needs || nodes_[p.id].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs, nullptr, needs ? std::move(fn) : BackwardFn{}});
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  bool has_grad(std::size_t id) const { return !nodes_.at(id).grad.empty(); }

  const Tensor<T>& grad(std::size_t id) const { return nodes_.at(id).grad; }

  /// Gradient buffer of a node, allocated as zeros on first use.
  Tensor<T>& grad_mut(std::size_t id) {
    auto& node = nodes_.at(id);
    if (node.grad.empty()) node.grad = Tensor<T>(node.value.shape());
    return node.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 and propagates to every reachable leaf.
  void backward(Var<T> root) {
    if (root.tape != this) throw ArgumentError("backward root belongs to a different tape");
    if (value(root.id).size() != 1)
      throw ArgumentError("backward requires a scalar root, got shape " + shape_str(value(root.id).shape()));
    grad_mut(root.id)[0] = T{1};
    for (std::size_t i = root.id + 1; i-- > 0;) {
      auto& node = nodes_[i];
      if (node.grad.empty() || !node.needs_grad) continue;
      if (node.backward) node.backward(*this, i);
      if (node.param) {
        auto& pg = node.param->grad;
        if (pg.shape() != node.value.shape()) pg = Tensor<T>(node.value.shape());
        auto src = node.grad.data();
        auto dst = pg.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
};

}  // namespace brainenc::nd

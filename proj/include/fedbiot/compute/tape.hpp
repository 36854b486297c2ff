#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "fedbiot/compute/array.hpp"

namespace fedbiot {

template <class T>
class Tape;

// Handle to a value recorded on a Tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Array<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape->requires_grad(*this); }
};

// Records primitive operations in execution order so adjoints can be replayed
// in reverse. Node creation order is a topological order of the graph, so the
// backward sweep walks node ids downwards from the root.
//
// A tape is owned by a single thread. Values may reference external arrays
// (frozen weights, parameters) without copying; those arrays must outlive the
// tape.
template <class T>
class Tape {
 public:
  // Receives the tape and the id of the node whose adjoint is being propagated.
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Array<T> value) { return push(std::move(value), nullptr, false, {}); }

  // References `ref` without copying and never propagates into it.
  Var<T> constant_ref(const Array<T>& ref) { return push({}, &ref, false, {}); }

  // References `ref` as a differentiable leaf; its gradient is available after
  // backward() through grad().
  Var<T> leaf_ref(const Array<T>& ref) { return push({}, &ref, true, {}); }

  Var<T> leaf(Array<T> value) { return push(std::move(value), nullptr, true, {}); }

  Var<T> record(Array<T> value, bool requires_grad, Backward backward) {
    return push(std::move(value), nullptr, requires_grad, std::move(backward));
  }

  const Array<T>& value(Var<T> v) const { return value(v.id); }
  const Array<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.owned;
  }

  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient accumulator of a node; zero-filled on first access.
  Array<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Array<T>(value(id).shape());
    return n.grad;
  }
  Array<T>& grad(Var<T> v) { return grad(v.id); }

  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  std::size_t size() const noexcept { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 and propagates adjoints to every node that
  // requires a gradient. Clears gradients from any previous sweep first.
  void backward(Var<T> root) {
    if (value(root).size() != 1) {
      throw DimensionError("backward: root must be a scalar, got " + shape_string(value(root).shape()));
    }
    backward(root, Array<T>(value(root).shape(), T{1}));
  }

  // Vector-Jacobian product: propagates the adjoint `seed` (shaped like root).
  void backward(Var<T> root, const Array<T>& seed) {
    if (root.tape != this) throw Error("backward: variable belongs to a different tape");
    require_same_shape(value(root), seed, "backward seed");
    for (Node& n : nodes_) n.grad = Array<T>{};
    if (!nodes_[root.id].requires_grad) return;
    grad(root.id) = seed;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  // Adds `delta` into the gradient of `id` when that node is differentiable.
  void accumulate(std::size_t id, const Array<T>& delta) {
    if (!requires_grad(id)) return;
    Array<T>& g = grad(id);
    T* dst = g.data();
    const T* src = delta.data();
    for (std::size_t i = 0, n = g.size(); i < n; ++i) dst[i] += src[i];
  }

 private:
  struct Node {
    Array<T> owned;
    const Array<T>* external = nullptr;
    Array<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var<T> push(Array<T> owned, const Array<T>* external, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(owned), external, {}, requires_grad, std::move(backward)});
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace fedbiot

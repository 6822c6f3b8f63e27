#pragma once

#include <deque>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ctsearch/ad/tensor.hpp"

namespace ctsearch::ad {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Per-parameter gradients produced by Tape::backward.
class Gradients {
 public:
  const Tensor* find(const Parameter& p) const {
    auto it = grads_.find(&p);
    return it == grads_.end() ? nullptr : &it->second;
  }
  void accumulate(const Parameter& p, const Tensor& g) {
    auto [it, inserted] = grads_.try_emplace(&p, g);
    if (!inserted) {
      for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
    }
  }
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const Parameter*, Tensor> grads_;
};

/// Records primitive operations in execution order; backward replays them in reverse.
/// Single-threaded; one tape per forward/backward pass.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad, const Tensor& out_value)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value) { return push_leaf(std::move(value), nullptr, false, nullptr); }
  /// Leaf referencing external storage; the referenced tensor must outlive the tape.
  Var constant_ref(const Tensor& value) { return push_leaf(Tensor{}, &value, false, nullptr); }
  /// Differentiable leaf owned by the tape (gradient readable via gradient()).
  Var input(Tensor value) { return push_leaf(std::move(value), nullptr, grad_enabled_, nullptr); }
  Var parameter(const Parameter& p) { return push_leaf(Tensor{}, &p.value, grad_enabled_, &p); }

  Var record(Tensor value, bool requires_grad, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad && grad_enabled_;
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool requires_grad(const Var& v) const { return requires_grad(v.id); }

  /// Mutable gradient accumulator for node `id`, zero-initialised on first use.
  Tensor& grad_ref(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = Tensor(value(id).shape(), 0.0);
    return n.grad;
  }

  /// Gradient of the last backward() loss with respect to `v` (empty if unreached).
  const Tensor& gradient(const Var& v) const { return nodes_.at(v.id).grad; }

  Gradients backward(const Var& loss) {
    if (loss.tape != this) throw Error("loss was recorded on a different tape");
    if (value(loss.id).size() != 1) {
      throw Error("backward needs a scalar loss, got shape " + shape_string(value(loss.id).shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor{};
    grad_ref(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, n.grad, n.external ? *n.external : n.value);
    }
    Gradients out;
    for (const auto& n : nodes_) {
      if (n.param && !n.grad.empty()) out.accumulate(*n.param, n.grad);
    }
    return out;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    const Parameter* param = nullptr;
    Tensor grad;
    Backward backward;
    bool requires_grad = false;
  };

  Var push_leaf(Tensor value, const Tensor* external, bool requires_grad, const Parameter* p) {
    Node n;
    n.value = std::move(value);
    n.external = external;
    n.param = p;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  std::deque<Node> nodes_;
  bool grad_enabled_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

}  // namespace ctsearch::ad

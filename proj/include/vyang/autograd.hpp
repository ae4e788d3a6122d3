#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vyang/tensor.hpp"

namespace vyang {

// A learnable tensor with a stable, model-unique name.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape(), 0.0) {}

  void zero_grad() { grad.fill(0.0); }
  const Shape& shape() const { return value.shape(); }
};

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  inline const Tensor& value() const;
  inline const Shape& shape() const;
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t numel() const { return value().numel(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records every executed op in order. backward() replays the record in
// reverse, visiting each op that lies on a path to the loss exactly once.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::span<const double>)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor t) { return push(std::move(t), false, nullptr, {}); }

  // Input whose gradient can be read back with grad() after backward().
  Var variable(Tensor t) { return push(std::move(t), grad_enabled_, nullptr, {}); }

  Var param(Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var(this, it->second);
    Var v = push(p.value, grad_enabled_, &p, {});
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }

  // Gradient accumulator for a parent; empty span when the parent needs none.
  std::span<double> accum(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return {};
    if (n.grad.empty()) n.grad.assign(n.value.numel(), 0.0);
    return n.grad;
  }
  std::span<double> accum(Var v) { return accum(v.id()); }

  // Records an op output. The backward closure receives the output gradient
  // and adds into parent accumulators obtained via accum().
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
    bool needs = false;
    if (grad_enabled_) {
      for (const Var& p : parents) needs = needs || nodes_[p.id()].needs_grad;
    }
    return push(std::move(value), needs, nullptr, needs ? std::move(fn) : BackwardFn{});
  }
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn fn) {
    bool needs = false;
    if (grad_enabled_) {
      for (const Var& p : parents) needs = needs || nodes_[p.id()].needs_grad;
    }
    return push(std::move(value), needs, nullptr, needs ? std::move(fn) : BackwardFn{});
  }

  // Returns the number of recorded ops visited.
  std::size_t backward(Var loss) {
    if (loss.tape() != this) throw Error("backward: loss belongs to a different tape");
    if (loss.value().numel() != 1) {
      throw DimensionError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (!grad_enabled_) throw Error("backward on a tape with gradients disabled");
    if (replayed_) throw Error("backward: tape already replayed");
    replayed_ = true;
    std::size_t visited = 0;
    if (!nodes_[loss.id()].needs_grad) return 0;
    accum(loss.id())[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty()) continue;
      ++visited;
      if (n.backward) n.backward(*this, std::span<const double>(n.grad));
      if (n.param != nullptr) {
        auto g = n.param->grad.data();
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
      }
    }
    return visited;
  }

  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id());
    if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
    return Tensor(n.value.shape(), n.grad);
  }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  Var push(Tensor t, bool needs, Parameter* p, BackwardFn fn) {
    nodes_.push_back(Node{std::move(t), {}, std::move(fn), p, needs});
    return Var(this, nodes_.size() - 1);
  }

  // deque keeps value references stable while ops append nodes.
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool grad_enabled_;
  bool replayed_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Shape& Var::shape() const { return tape_->value(id_).shape(); }

}  // namespace vyang

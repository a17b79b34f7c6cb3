#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "mmmie/tensor.hpp"

namespace mmmie {

class Tape;

/// Handle to a tensor recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode differentiation tape.
///
/// Nodes are appended in evaluation order, so every node's parents precede it.
/// A node requires a gradient when it is a variable leaf or when any parent
/// does; adjoint rules run only for such nodes. A tape is single-threaded.
class Tape {
 public:
  /// Adjoint rule: reads the node's output gradient and accumulates into parents.
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf that receives a gradient.
  Var variable(Tensor value);
  /// Records an op output. `parents` must already live on this tape.
  Var record(Tensor value, std::span<const Var> parents, Backward backward);

  /// Populates gradients of every node reachable from `loss` (a scalar).
  void backward(Var loss);
  /// Gradient of `v` from the last backward(); throws for detached tensors.
  const Tensor& grad(Var v) const;
  bool has_grad(Var v) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_[id].parents; }

  /// Output gradient of node `id` while adjoint rules run.
  const Tensor& out_grad(std::size_t id) const { return grads_[id]; }
  /// Accumulation buffer for `id`, or nullptr when `id` needs no gradient.
  Tensor* grad_slot(std::size_t id);

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> parents;
    Backward backward;
    bool requires_grad = false;
  };

  Var push(Tensor value, std::vector<std::size_t> parents, Backward backward, bool requires_grad);

  // deque keeps value() references valid while later ops are recorded.
  std::deque<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> grad_present_;
};

}  // namespace mmmie

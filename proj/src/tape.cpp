#include "mmmie/tape.hpp"

#include <string>

namespace mmmie {

const Tensor& Var::value() const { return tape_->value(id_); }

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::push(Tensor value, std::vector<std::size_t> parents, Backward backward, bool requires_grad) {
  if (!value.all_finite()) {
    throw NumericalError("non-finite value produced at tape node " + std::to_string(nodes_.size()));
  }
  nodes_.push_back(Node{std::move(value), std::move(parents), std::move(backward), requires_grad});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return push(std::move(value), {}, nullptr, false); }

Var Tape::variable(Tensor value) { return push(std::move(value), {}, nullptr, true); }

Var Tape::record(Tensor value, std::span<const Var> parents, Backward backward) {
  std::vector<std::size_t> ids;
  ids.reserve(parents.size());
  bool needs_grad = false;
  for (const Var& p : parents) {
    if (p.tape_ != this) throw std::invalid_argument("operand recorded on a different tape");
    ids.push_back(p.id_);
    needs_grad = needs_grad || nodes_[p.id_].requires_grad;
  }
  return push(std::move(value), std::move(ids), needs_grad ? std::move(backward) : nullptr, needs_grad);
}

Tensor* Tape::grad_slot(std::size_t id) {
  if (!nodes_[id].requires_grad) return nullptr;
  if (!grad_present_[id]) {
    grads_[id] = Tensor(nodes_[id].value.shape());
    grad_present_[id] = 1;
  }
  return &grads_[id];
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw std::invalid_argument("loss recorded on a different tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward() requires a scalar loss, got " + shape_to_string(loss.shape()));
  }
  grads_.assign(nodes_.size(), Tensor());
  grad_present_.assign(nodes_.size(), 0);
  if (!nodes_[loss.id_].requires_grad) return;
  grads_[loss.id_] = Tensor::full(loss.shape(), 1.0);
  grad_present_[loss.id_] = 1;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    if (!grad_present_[i] || !nodes_[i].backward) continue;
    nodes_[i].backward(*this, i);
  }
}

bool Tape::has_grad(Var v) const { return v.id_ < grad_present_.size() && grad_present_[v.id_]; }

const Tensor& Tape::grad(Var v) const {
  if (v.tape_ != this) throw std::invalid_argument("tensor recorded on a different tape");
  if (!nodes_[v.id_].requires_grad) {
    throw std::invalid_argument("gradient requested for detached tensor (node " + std::to_string(v.id_) + ")");
  }
  if (!has_grad(v)) {
    throw std::invalid_argument("no gradient for node " + std::to_string(v.id_) +
                                "; it is not reachable from the last backward() loss");
  }
  return grads_[v.id_];
}

}  // namespace mmmie

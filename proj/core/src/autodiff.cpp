#include "eatkit/autodiff.hpp"

#include <algorithm>
#include <vector>

namespace eatkit {

Tensor Var::grad() const {
  if (tape_->has_grad(id_)) return tape_->grad_of(id_);
  return Tensor::zeros_like(value());
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
  Node n;
  n.op = "param";
  n.value = p.value;
  n.requires_grad = grad_enabled_;
  n.param = &p;
  nodes_.push_back(std::move(n));
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_ids_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
                 BackwardFn fn) {
  return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  if (grad_enabled_) {
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [this](const Var& v) { return nodes_[v.id()].requires_grad; });
    if (n.requires_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Tensor& Tape::grad_buffer(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
  if (loss.value().numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  }
  for (Node& n : nodes_) {
    if (!n.grad.empty()) n.grad.fill(0.0);
  }
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id()).fill(1.0);

  for (std::uint32_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param != nullptr) {
      n.param->grad.add_inplace(n.grad);
      continue;
    }
    if (!n.backward) continue;
    if (!fault_op_.empty() && n.op == fault_op_) {
      for (double& g : n.grad.data()) g *= fault_factor_;
    }
    n.backward(*this, id);
  }
}

}  // namespace eatkit

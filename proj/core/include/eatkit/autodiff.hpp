#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>

#include "eatkit/tensor.hpp"

namespace eatkit {

/// A learnable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros_like(value)) {}
  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(int axis) const { return value().dim(axis); }
  bool requires_grad() const;
  /// Gradient accumulated by the last backward pass (zeros if none reached it).
  Tensor grad() const;

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Ordered record of operations for one forward pass. Entries are appended in
/// execution order, so reverse iteration is a valid topological order.
///
/// A tape is single-threaded. Independent forward passes use independent tapes.
class Tape {
 public:
  /// Receives the tape and the id of the entry whose output gradient is ready.
  using BackwardFn = std::function<void(Tape&, std::uint32_t)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Non-differentiable input.
  Var constant(Tensor value);
  /// Differentiable leaf not tied to a Parameter (used by gradient checks).
  Var leaf(Tensor value);
  /// Leaf bound to a parameter; backward() adds into param.grad. The same
  /// parameter always maps to the same entry on one tape.
  Var param(Parameter& p);

  /// Records an op output. `inputs` decide whether the result needs a gradient.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn fn);

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  std::string_view op_name(std::uint32_t id) const { return nodes_[id].op; }
  /// Gradient buffer for `id`, allocated as zeros on first use.
  Tensor& grad_buffer(std::uint32_t id);
  /// Output gradient for the entry currently being differentiated.
  const Tensor& grad_of(std::uint32_t id) const { return nodes_[id].grad; }
  bool has_grad(std::uint32_t id) const { return !nodes_[id].grad.empty(); }

  /// Reverse pass from a scalar (single-element) loss. Parameter gradients
  /// accumulate into Parameter::grad; call repeatedly to accumulate.
  void backward(Var loss);

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  /// Distinct parameters bound to this tape.
  std::size_t param_count() const noexcept { return param_ids_.size(); }

  /// Test hook: scales the backward output of every entry named `op` by
  /// `factor`, which lets verification prove it can detect a broken rule.
  void inject_backward_fault(std::string op, double factor) {
    fault_op_ = std::move(op);
    fault_factor_ = factor;
  }

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::uint32_t> param_ids_;
  bool grad_enabled_;
  std::string fault_op_;
  double fault_factor_ = 1.0;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

}  // namespace eatkit

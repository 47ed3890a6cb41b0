#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "eatkit/autodiff.hpp"

namespace eatkit {

/// Builds a scalar loss on `tape` from the differentiable input `x`.
using ScalarFn = std::function<Var(Tape& tape, Var x)>;

struct GradCheckOptions {
  double h = 1e-5;
  /// When set, only these flat coordinates of x are differenced.
  std::optional<std::vector<std::size_t>> coordinates;
  /// Forwarded to Tape::inject_backward_fault (negative-control tests).
  std::string fault_op;
  double fault_factor = 1.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares reverse-mode gradients against central differences
/// (f(x+h) - f(x-h)) / 2h coordinate by coordinate. The error per coordinate
/// is |analytic - numeric| / max(1, |analytic|, |numeric|).
GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, const GradCheckOptions& opt = {});

/// Convenience overload returning only the maximum relative error.
double grad_check(const ScalarFn& f, const Tensor& x, double h);

/// Gradient check against the entries of parameters rather than an input
/// tensor. `loss` runs a full forward pass on the given tape. Each selected
/// coordinate is (parameter index, flat offset).
struct ParamCoordinate {
  Parameter* param;
  std::size_t offset;
};
GradCheckResult grad_check_params(const std::function<Var(Tape&)>& loss,
                                  std::span<const ParamCoordinate> coords, double h,
                                  const std::string& fault_op = {}, double fault_factor = 1.0);

}  // namespace eatkit

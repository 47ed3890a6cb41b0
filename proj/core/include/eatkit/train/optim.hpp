#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "eatkit/autodiff.hpp"

namespace eatkit {

struct AdamOptions {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const AdamOptions&) const = default;
};

/// Moments are keyed by parameter name and created lazily as zeros.
struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

/// One bias-corrected Adam update from each parameter's accumulated grad.
/// Every gradient is checked before any parameter changes; a non-finite entry
/// throws NumericError naming the parameter.
void adam_step(std::span<Parameter* const> params, AdamState& state);

}  // namespace eatkit

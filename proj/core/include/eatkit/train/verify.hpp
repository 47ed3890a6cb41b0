#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eatkit/model/config.hpp"

namespace eatkit {

struct VerifyCheck {
  std::string name;
  bool passed = false;
  /// The measured quantity (max error, count, ...) and the bound it is held to.
  double value = 0.0;
  double tolerance = 0.0;
  std::string detail;

  nlohmann::json to_json() const;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  /// Run only checks whose name contains this substring.
  std::string filter;
  /// Scales the backward pass of every node with this op name, so checks that
  /// depend on it must fail (negative control).
  std::string fault_op;
  double fault_factor = 1.5;
  /// Random inputs per gradient check.
  std::size_t trials = 5;
};

struct VerifyLedger {
  std::uint64_t seed = 0;
  std::vector<VerifyCheck> checks;

  bool passed() const;
  /// Deterministic in the seed: no timings.
  nlohmann::json to_json() const;
};

/// Self-checks of the numerical core and the model: a gradient check per
/// differentiable op ("grad.<op>"), block and full-model gradient checks, the
/// MD-MSA reduction, degenerate GLI splits, WOM normalization, the GLI
/// parameter formula, metric oracles and the stage shape pyramid.
VerifyLedger verify(const ModelConfig& config, const VerifyOptions& options = {});

/// Names of all checks in execution order.
std::vector<std::string> verify_check_names();

}  // namespace eatkit

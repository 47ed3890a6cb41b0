#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace eatkit {

/// Thrown for architecturally invalid hyperparameters.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::array<std::size_t, 4> stage_dims{32, 64, 128, 256};
  std::array<std::size_t, 4> stage_depths{1, 1, 2, 1};
  std::array<std::size_t, 4> stage_heads{1, 2, 4, 8};
  /// Fraction of channels routed through the GLI global (attention) path.
  double split_ratio = 0.5;
  /// Odd kernel size for MSRA branches and the GLI local path.
  std::size_t local_kernel = 3;
  /// Dilation of each within-block MSRA branch; its length is the branch count.
  std::vector<std::size_t> msra_dilations{1, 2, 3};
  std::size_t stem_stride = 4;
  std::size_t in_channels = 3;
  std::size_t num_classes = 4;
  double ffn_expansion = 4.0;
  bool md_msa_enabled = true;
  /// Debug switch: skip the sigmoid modulation inside MD-MSA.
  bool modulation_bypass = false;

  static ModelConfig mini() { return {}; }

  /// Total downsampling factor from input to the last stage.
  std::size_t total_stride() const { return stem_stride * 8; }

  /// Throws ConfigError naming the violated constraint.
  void validate() const;

  /// round(p·C) adjusted down to a multiple of the stage's head count.
  std::size_t global_channels(std::size_t stage) const;
  /// Human-readable notes for every stage where global_channels() adjusted round(p·C).
  std::vector<std::string> split_adjustments() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Number of attention-path channels for `channels` at ratio `p`, rounded and
/// then floored to a multiple of `heads`.
std::size_t global_channel_count(std::size_t channels, double p, std::size_t heads);

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace eatkit

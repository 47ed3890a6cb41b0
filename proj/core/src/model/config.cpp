#include "eatkit/model/config.hpp"

#include <cmath>

namespace eatkit {

std::size_t global_channel_count(std::size_t channels, double p, std::size_t heads) {
  const auto rounded = static_cast<std::size_t>(std::llround(p * static_cast<double>(channels)));
  if (heads == 0) return rounded;
  return rounded - rounded % heads;
}

void ModelConfig::validate() const {
  if (!(split_ratio >= 0.0 && split_ratio <= 1.0)) {
    throw ConfigError("model.split_ratio must lie in [0, 1], got " + std::to_string(split_ratio));
  }
  if (local_kernel % 2 == 0) {
    throw ConfigError("model.local_kernel must be odd, got " + std::to_string(local_kernel));
  }
  if (msra_dilations.empty()) throw ConfigError("model.msra_dilations must be nonempty");
  for (std::size_t d : msra_dilations) {
    if (d == 0) throw ConfigError("model.msra_dilations entries must be >= 1");
  }
  if (stem_stride != 1 && stem_stride != 2 && stem_stride != 4) {
    throw ConfigError("model.stem_stride must be 1, 2 or 4, got " + std::to_string(stem_stride));
  }
  if (in_channels == 0) throw ConfigError("model.in_channels must be >= 1");
  if (num_classes < 2) throw ConfigError("model.num_classes must be >= 2");
  if (!(ffn_expansion > 0.0)) throw ConfigError("model.ffn_expansion must be > 0");
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string stage = "stage" + std::to_string(s + 1);
    if (stage_dims[s] == 0) throw ConfigError("model.stage_dims: " + stage + " has zero channels");
    if (stage_heads[s] == 0) throw ConfigError("model.stage_heads: " + stage + " has zero heads");
    if (stage_dims[s] % stage_heads[s] != 0) {
      throw ConfigError("model.stage_dims: " + stage + " dim " + std::to_string(stage_dims[s]) +
                        " is not divisible by its " + std::to_string(stage_heads[s]) + " heads");
    }
    const std::size_t hidden = static_cast<std::size_t>(std::llround(ffn_expansion * stage_dims[s]));
    if (hidden == 0) throw ConfigError("model.ffn_expansion yields an empty hidden layer in " + stage);
  }
}

std::size_t ModelConfig::global_channels(std::size_t stage) const {
  return global_channel_count(stage_dims[stage], split_ratio, stage_heads[stage]);
}

std::vector<std::string> ModelConfig::split_adjustments() const {
  std::vector<std::string> notes;
  for (std::size_t s = 0; s < 4; ++s) {
    const auto rounded = static_cast<std::size_t>(std::llround(split_ratio * static_cast<double>(stage_dims[s])));
    const std::size_t used = global_channels(s);
    if (used != rounded) {
      notes.push_back("stage" + std::to_string(s + 1) + ": global channels " + std::to_string(rounded) +
                      " -> " + std::to_string(used) + " (multiple of " + std::to_string(stage_heads[s]) +
                      " heads)");
    }
  }
  return notes;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"stage_dims", c.stage_dims},
                     {"stage_depths", c.stage_depths},
                     {"stage_heads", c.stage_heads},
                     {"split_ratio", c.split_ratio},
                     {"local_kernel", c.local_kernel},
                     {"msra_dilations", c.msra_dilations},
                     {"stem_stride", c.stem_stride},
                     {"in_channels", c.in_channels},
                     {"num_classes", c.num_classes},
                     {"ffn_expansion", c.ffn_expansion},
                     {"md_msa_enabled", c.md_msa_enabled},
                     {"modulation_bypass", c.modulation_bypass}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.stage_dims = j.value("stage_dims", d.stage_dims);
  c.stage_depths = j.value("stage_depths", d.stage_depths);
  c.stage_heads = j.value("stage_heads", d.stage_heads);
  c.split_ratio = j.value("split_ratio", d.split_ratio);
  c.local_kernel = j.value("local_kernel", d.local_kernel);
  c.msra_dilations = j.value("msra_dilations", d.msra_dilations);
  c.stem_stride = j.value("stem_stride", d.stem_stride);
  c.in_channels = j.value("in_channels", d.in_channels);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.ffn_expansion = j.value("ffn_expansion", d.ffn_expansion);
  c.md_msa_enabled = j.value("md_msa_enabled", d.md_msa_enabled);
  c.modulation_bypass = j.value("modulation_bypass", d.modulation_bypass);
}

}  // namespace eatkit

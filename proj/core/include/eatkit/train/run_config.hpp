#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "eatkit/data/dataset.hpp"
#include "eatkit/train/trainer.hpp"

namespace eatkit {

/// Everything a training or evaluation run needs. Serialized as one JSON
/// object with flat dotted keys ("model.split_ratio", "train.epochs", ...).
struct RunConfig {
  TrainConfig train;
  /// Class-per-directory image tree; ignored when `synthetic` is set.
  std::string data_root;
  bool synthetic = false;
  std::size_t synthetic_classes = 4;
  std::size_t synthetic_per_class = 50;
  double synthetic_noise = 0.08;
  SplitRatios split;

  /// Missing keys keep their defaults. Unknown keys and wrongly typed values
  /// throw ConfigError naming the key.
  static RunConfig from_json(const nlohmann::json& flat);
  /// Applies the keys present in `flat` on top of this config.
  void merge(const nlohmann::json& flat);
  nlohmann::json to_json() const;
  /// Throws ConfigError naming the violated constraint.
  void validate() const;
};

/// Rebuilds the configuration that produced `ckpt`, including its data source.
RunConfig run_config_from_checkpoint(const Checkpoint& ckpt);

/// Scans data_root or generates the synthetic set, using train.seed.
DatasetIndex load_dataset(const RunConfig& cfg);

}  // namespace eatkit

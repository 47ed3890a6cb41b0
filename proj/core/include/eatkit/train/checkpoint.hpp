#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "eatkit/data/dataset.hpp"
#include "eatkit/model/blocks.hpp"
#include "eatkit/train/optim.hpp"

namespace eatkit {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything needed to rebuild a model and continue training.
///
/// On disk (`.eatkpt`): the line "eatkpt 1", one line of key-sorted JSON
/// (this header plus each tensor's shape and byte offset), then the tensors as
/// little-endian IEEE-754 doubles in lexicographic name order. Model tensors
/// use their parameter names; optimizer moments are stored as
/// "optim.m.<name>" and "optim.v.<name>".
struct Checkpoint {
  ModelConfig model;
  NormStats norm;
  std::vector<std::string> classes;
  /// Completed epochs.
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  std::uint64_t optim_step = 0;
  AdamOptions adam;
  std::size_t best_epoch = 0;
  double best_val_accuracy = -1.0;
  /// Data-source descriptor and the training settings that produced the file.
  nlohmann::json data;
  nlohmann::json train;
  std::map<std::string, Tensor> tensors;

  nlohmann::json header() const;
};

Checkpoint make_checkpoint(const EatFormer& model, const AdamState* optim);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws CheckpointError for unreadable or malformed files.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies parameter values into `model`. Throws CheckpointError if the model
/// config differs or a tensor is missing or has the wrong shape.
void restore_parameters(const Checkpoint& ckpt, EatFormer& model);
void restore_optimizer(const Checkpoint& ckpt, AdamState& optim);
/// Builds a model from the stored config and values.
EatFormer model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace eatkit

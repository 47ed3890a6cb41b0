#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "eatkit/data/dataset.hpp"
#include "eatkit/metrics.hpp"
#include "eatkit/model/blocks.hpp"
#include "eatkit/train/checkpoint.hpp"
#include "eatkit/train/optim.hpp"

namespace eatkit {

struct TrainConfig {
  ModelConfig model;
  AdamOptions adam;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  /// Split each batch into chunks of this size and sum their gradients before
  /// the step; 0 disables.
  std::size_t micro_batch = 0;
  std::size_t height = 64;
  std::size_t width = 64;
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentOptions augment_options;
  /// 0 reads EATKIT_DATA_WORKERS.
  std::size_t workers = 0;

  nlohmann::json to_json() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> val_loss;
  std::optional<MetricsReport> val;

  /// One JSON-lines record; contains no timings so logs are reproducible.
  nlohmann::json to_json() const;
};

struct TrainOptions {
  /// Continue from this checkpoint (its epoch count is the starting point).
  std::optional<Checkpoint> resume;
  /// When set, log.jsonl, best.eatkpt and last.eatkpt are written here as
  /// training proceeds.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  EatFormer model;
  AdamState optim;
  NormStats norm;
  std::vector<EpochRecord> log;
  Checkpoint best;
  Checkpoint last;
};

/// Deterministic in (config, data, seed). Epoch e (1-based) shuffles and
/// augments with streams derived from (seed, e - 1). Non-finite losses throw
/// NumericError naming the epoch and batch.
TrainResult train(const TrainConfig& config, const DatasetIndex& data, const TrainOptions& options = {});

struct EvalOptions {
  std::size_t batch_size = 32;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t workers = 0;
};

struct EvalResult {
  MetricsReport report;
  double mean_loss = 0.0;
};

/// Argmax with ties going to the lowest class index.
int predict_class(std::span<const double> logits);

/// No augmentation; order-independent.
EvalResult evaluate(const EatFormer& model, const NormStats& norm, const DatasetIndex& data, Split split,
                    const EvalOptions& options = {});
/// Throws CheckpointError if the checkpoint's class count differs from the data.
EvalResult evaluate(const Checkpoint& ckpt, const DatasetIndex& data, Split split, const EvalOptions& options = {});

struct ThroughputResult {
  std::size_t batch_size = 0;
  std::size_t iterations = 0;
  double mean_images_per_second = 0.0;
  double stddev_images_per_second = 0.0;
  std::vector<double> seconds;

  nlohmann::json to_json() const;
};

/// One untimed warmup pass, then `iterations` timed forward passes on random
/// input.
ThroughputResult throughput_bench(const EatFormer& model, std::size_t batch_size, std::size_t iterations,
                                  std::size_t height, std::size_t width);

}  // namespace eatkit

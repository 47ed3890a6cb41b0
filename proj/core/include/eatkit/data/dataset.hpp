#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eatkit/data/augment.hpp"
#include "eatkit/data/image.hpp"

namespace eatkit {

enum class Split { Train, Val, Test };

std::string_view to_string(Split s);
/// Accepts "train", "val" and "test"; throws std::invalid_argument otherwise.
Split parse_split(std::string_view name);

struct SplitRatios {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;

  /// Throws std::invalid_argument unless all ratios are ≥ 0 and sum to 1.
  void validate() const;
  bool operator==(const SplitRatios&) const = default;
};

struct Sample {
  /// Relative to the dataset root ("<class>/<file>").
  std::string path;
  int label = 0;
  Split split = Split::Train;
};

/// Ordered, labeled sample list with its train/val/test assignment. Built from
/// a class-per-directory tree or generated in memory.
struct DatasetIndex {
  std::filesystem::path root;
  std::vector<std::string> classes;
  std::vector<Sample> samples;
  SplitRatios ratios;
  std::uint64_t seed = 0;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
  /// Describes where the data came from; stored in checkpoints.
  nlohmann::json source;
  /// In-memory pixels (synthetic data), parallel to `samples`.
  std::shared_ptr<const std::vector<Tensor>> images;

  std::size_t num_classes() const { return classes.size(); }
  /// Sample positions in `split`, in index order.
  std::vector<std::size_t> indices(Split split) const;
  /// 3×H×W in [0, 1] at native resolution.
  Tensor image(std::size_t i) const;

  /// Deterministic description of classes, samples and split.
  nlohmann::json to_json() const;
};

/// Scans root/<class>/*.{pgm,ppm}. Classes are directories holding at least one
/// decodable image, in lexicographic order. Undecodable files are skipped and
/// counted. The split is stratified per class and depends only on the sorted
/// paths, the seed and the ratios.
DatasetIndex scan_dataset(const std::filesystem::path& root, const SplitRatios& ratios, std::uint64_t seed);

/// Stratified assignment of `samples` (already in canonical order).
void assign_splits(std::vector<Sample>& samples, std::size_t num_classes, const SplitRatios& ratios,
                   std::uint64_t seed);

struct SynthOptions {
  std::size_t classes = 4;
  std::size_t per_class = 50;
  std::size_t height = 64;
  std::size_t width = 64;
  std::uint64_t seed = 0;
  double noise = 0.08;
  SplitRatios ratios;
};

/// Parameters of one synthetic draw.
struct PatternParams {
  double phase_y = 0.0;
  double phase_x = 0.0;
  double frequency_scale = 1.0;
  double contrast = 0.35;
};

/// Noise-free pattern of class `cls`, 3×H×W in [0, 1]. Classes cycle through
/// horizontal bars, vertical bars, rings and a checkerboard; every further
/// group of four uses a higher spatial frequency.
Tensor synth_pattern(std::size_t cls, std::size_t height, std::size_t width, const PatternParams& p = {});
DatasetIndex synth_dataset(const SynthOptions& opt);

/// Per-channel mean and standard deviation.
struct NormStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};
  bool operator==(const NormStats&) const = default;
};

/// Statistics over the train split after resizing to height × width.
NormStats compute_norm_stats(const DatasetIndex& index, std::size_t height, std::size_t width);
void normalize_inplace(Tensor& image, const NormStats& stats);

struct Batch {
  /// B×3×H×W, standardized.
  Tensor images;
  std::vector<int> labels;
  /// Positions in DatasetIndex::samples.
  std::vector<std::size_t> sample_ids;
};

struct BatchOptions {
  std::size_t batch_size = 32;
  std::size_t height = 64;
  std::size_t width = 64;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  /// Shuffling and augmentation apply to the train split only.
  bool shuffle = true;
  bool augment = true;
  AugmentOptions augment_options;
  NormStats norm;
  /// 0 reads EATKIT_DATA_WORKERS (default 1).
  std::size_t workers = 0;
};

/// Worker count from EATKIT_DATA_WORKERS; throws std::invalid_argument if set
/// to anything but a positive integer.
std::size_t data_workers_from_env();

/// Lazily produces the batches of one epoch. Output is identical for any
/// worker count.
class BatchStream {
 public:
  BatchStream(const DatasetIndex& index, Split split, const BatchOptions& opt);

  std::optional<Batch> next();
  std::size_t num_batches() const;
  std::size_t num_samples() const { return order_.size(); }
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  Tensor prepare(std::size_t sample) const;

  const DatasetIndex* index_;
  Split split_;
  BatchOptions opt_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Materializes a whole epoch.
std::vector<Batch> make_batches(const DatasetIndex& index, Split split, const BatchOptions& opt);

}  // namespace eatkit

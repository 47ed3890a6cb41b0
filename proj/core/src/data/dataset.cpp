#include "eatkit/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <numbers>
#include <thread>

namespace eatkit {

namespace fs = std::filesystem;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

void SplitRatios::validate() const {
  if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9) {
    throw std::invalid_argument("data.split ratios must be non-negative and sum to 1");
  }
}

std::vector<std::size_t> DatasetIndex::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == split) out.push_back(i);
  return out;
}

Tensor DatasetIndex::image(std::size_t i) const {
  if (images) return (*images).at(i);
  return load_image(root / samples.at(i).path);
}

nlohmann::json DatasetIndex::to_json() const {
  nlohmann::json j;
  j["root"] = root.generic_string();
  j["classes"] = classes;
  j["seed"] = seed;
  j["ratios"] = {{"train", ratios.train}, {"val", ratios.val}, {"test", ratios.test}};
  j["skipped"] = skipped;
  j["source"] = source;
  auto& arr = j["samples"] = nlohmann::json::array();
  for (const Sample& s : samples) arr.push_back({{"path", s.path}, {"label", s.label}, {"split", to_string(s.split)}});
  return j;
}

void assign_splits(std::vector<Sample>& samples, std::size_t num_classes, const SplitRatios& ratios,
                   std::uint64_t seed) {
  ratios.validate();
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (samples[i].label == static_cast<int>(c)) members.push_back(i);
    Rng rng(derive_seed(seed, "split", c));
    for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng.below(i)]);
    const auto n = static_cast<double>(members.size());
    const std::size_t n_train = std::min<std::size_t>(members.size(), static_cast<std::size_t>(std::llround(n * ratios.train)));
    const std::size_t n_val =
        std::min<std::size_t>(members.size() - n_train, static_cast<std::size_t>(std::llround(n * ratios.val)));
    for (std::size_t r = 0; r < members.size(); ++r) {
      samples[members[r]].split = r < n_train ? Split::Train : (r < n_train + n_val ? Split::Val : Split::Test);
    }
  }
}

namespace {

std::string lower_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

}  // namespace

DatasetIndex scan_dataset(const fs::path& root, const SplitRatios& ratios, std::uint64_t seed) {
  ratios.validate();
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw DataError("dataset root is not a directory: " + root.string());

  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) class_dirs.push_back(e.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());

  DatasetIndex index;
  index.root = root;
  index.ratios = ratios;
  index.seed = seed;
  for (const fs::path& dir : class_dirs) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<std::string> accepted;
    for (const fs::path& f : files) {
      const std::string ext = lower_extension(f);
      const std::string rel = dir.filename().string() + "/" + f.filename().string();
      if (ext == ".pgm" || ext == ".ppm") {
        try {
          decode_pnm(read_file(f));
          accepted.push_back(rel);
        } catch (const DataError& e) {
          ++index.skipped;
          index.warnings.push_back(rel + ": " + e.what());
        }
      } else if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") {
        ++index.skipped;
        index.warnings.push_back(rel + ": unsupported image format (convert to PGM/PPM)");
      }
    }
    if (accepted.empty()) continue;
    const int label = static_cast<int>(index.classes.size());
    index.classes.push_back(dir.filename().string());
    for (std::string& rel : accepted) index.samples.push_back({std::move(rel), label, Split::Train});
  }
  if (index.samples.empty()) throw DataError("no decodable images under " + root.string());
  assign_splits(index.samples, index.classes.size(), ratios, seed);
  index.source = {{"kind", "directory"},
                  {"root", root.generic_string()},
                  {"seed", seed},
                  {"split", {ratios.train, ratios.val, ratios.test}}};
  return index;
}

Tensor synth_pattern(std::size_t cls, std::size_t height, std::size_t width, const PatternParams& p) {
  Tensor t({3, height, width});
  const double cycles = (4.0 + 2.0 * static_cast<double>(cls / 4)) * p.frequency_scale;
  const double two_pi = 2.0 * std::numbers::pi;
  const double cy = 0.5 + 0.05 * std::cos(p.phase_x), cx = 0.5 + 0.05 * std::sin(p.phase_x);
  const std::size_t plane = height * width;
  for (std::size_t i = 0; i < height; ++i) {
    const double v = (static_cast<double>(i) + 0.5) / static_cast<double>(height);
    for (std::size_t j = 0; j < width; ++j) {
      const double u = (static_cast<double>(j) + 0.5) / static_cast<double>(width);
      double s = 0.0;
      switch (cls % 4) {
        case 0:
          s = std::sin(two_pi * cycles * v + p.phase_y);
          break;
        case 1:
          s = std::sin(two_pi * cycles * u + p.phase_x);
          break;
        case 2:
          s = std::sin(two_pi * cycles * std::hypot(u - cx, v - cy) + p.phase_y);
          break;
        default:
          s = std::sin(two_pi * cycles * u + p.phase_x) * std::sin(two_pi * cycles * v + p.phase_y);
          break;
      }
      const double value = std::clamp(0.5 + p.contrast * s, 0.0, 1.0);
      for (std::size_t c = 0; c < 3; ++c) t[c * plane + i * width + j] = value;
    }
  }
  return t;
}

DatasetIndex synth_dataset(const SynthOptions& opt) {
  if (opt.classes < 2) throw std::invalid_argument("synthetic data needs at least 2 classes");
  if (opt.per_class == 0 || opt.height == 0 || opt.width == 0) {
    throw std::invalid_argument("synthetic data needs positive per_class, height and width");
  }
  static const char* kNames[] = {"horizontal_bars", "vertical_bars", "rings", "checker"};
  DatasetIndex index;
  index.root = "synthetic";
  index.ratios = opt.ratios;
  index.seed = opt.seed;
  auto images = std::make_shared<std::vector<Tensor>>();
  images->reserve(opt.classes * opt.per_class);
  const std::size_t plane = opt.height * opt.width;
  for (std::size_t c = 0; c < opt.classes; ++c) {
    std::string name = kNames[c % 4];
    if (c >= 4) name += "_f" + std::to_string(c / 4);
    index.classes.push_back(name);
    for (std::size_t i = 0; i < opt.per_class; ++i) {
      Rng rng(derive_seed(opt.seed, "synth", c * opt.per_class + i));
      PatternParams p;
      p.phase_y = rng.uniform(0.0, 2.0 * std::numbers::pi);
      p.phase_x = rng.uniform(0.0, 2.0 * std::numbers::pi);
      p.frequency_scale = rng.uniform(0.9, 1.1);
      p.contrast = rng.uniform(0.3, 0.4);
      Tensor img = synth_pattern(c, opt.height, opt.width, p);
      for (std::size_t k = 0; k < plane; ++k) {
        const double v = std::clamp(img[k] + opt.noise * rng.normal(), 0.0, 1.0);
        img[k] = img[plane + k] = img[2 * plane + k] = v;
      }
      images->push_back(std::move(img));
      char rel[64];
      std::snprintf(rel, sizeof rel, "%s/%04zu", name.c_str(), i);
      index.samples.push_back({rel, static_cast<int>(c), Split::Train});
    }
  }
  index.images = std::move(images);
  assign_splits(index.samples, opt.classes, opt.ratios, opt.seed);
  index.source = {{"kind", "synthetic"},   {"classes", opt.classes}, {"per_class", opt.per_class},
                  {"height", opt.height},  {"width", opt.width},     {"seed", opt.seed},
                  {"noise", opt.noise},    {"split", {opt.ratios.train, opt.ratios.val, opt.ratios.test}}};
  return index;
}

NormStats compute_norm_stats(const DatasetIndex& index, std::size_t height, std::size_t width) {
  const auto ids = index.indices(Split::Train);
  if (ids.empty()) throw DataError("cannot compute normalization statistics: empty train split");
  std::array<double, 3> sum{}, sq{};
  const std::size_t plane = height * width;
  for (std::size_t id : ids) {
    const Tensor img = resize_bilinear(index.image(id), height, width);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t k = 0; k < plane; ++k) {
        const double v = img[c * plane + k];
        sum[c] += v;
        sq[c] += v * v;
      }
  }
  NormStats s;
  const double n = static_cast<double>(ids.size() * plane);
  for (std::size_t c = 0; c < 3; ++c) {
    s.mean[c] = sum[c] / n;
    const double var = std::max(0.0, sq[c] / n - s.mean[c] * s.mean[c]);
    s.stddev[c] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return s;
}

void normalize_inplace(Tensor& image, const NormStats& stats) {
  const std::size_t plane = image.dim(1) * image.dim(2);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t k = 0; k < plane; ++k) {
      double& v = image[c * plane + k];
      v = (v - stats.mean[c]) / stats.stddev[c];
    }
}

std::size_t data_workers_from_env() {
  const char* env = std::getenv("EATKIT_DATA_WORKERS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1 || v > 256) {
    throw std::invalid_argument(std::string("EATKIT_DATA_WORKERS must be an integer in [1, 256], got '") + env + "'");
  }
  return static_cast<std::size_t>(v);
}

BatchStream::BatchStream(const DatasetIndex& index, Split split, const BatchOptions& opt)
    : index_(&index), split_(split), opt_(opt), order_(index.indices(split)) {
  if (opt_.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (opt_.height % 32 != 0 || opt_.width % 32 != 0 || opt_.height == 0 || opt_.width == 0) {
    throw std::invalid_argument("image size must be a positive multiple of 32, got " + std::to_string(opt_.height) +
                                "x" + std::to_string(opt_.width));
  }
  if (order_.empty()) throw DataError("split '" + std::string(to_string(split)) + "' is empty");
  if (opt_.workers == 0) opt_.workers = data_workers_from_env();
  if (split_ == Split::Train && opt_.shuffle) {
    Rng rng(derive_seed(opt_.seed, "shuffle", opt_.epoch));
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng.below(i)]);
  }
}

std::size_t BatchStream::num_batches() const { return (order_.size() + opt_.batch_size - 1) / opt_.batch_size; }

Tensor BatchStream::prepare(std::size_t sample) const {
  Tensor img = resize_bilinear(index_->image(sample), opt_.height, opt_.width);
  if (split_ == Split::Train && opt_.augment) {
    Rng rng(derive_seed(derive_seed(opt_.seed, "augment", opt_.epoch), "sample", sample));
    img = augment(img, rng, opt_.augment_options);
  }
  normalize_inplace(img, opt_.norm);
  return img;
}

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t b = std::min(opt_.batch_size, order_.size() - cursor_);
  Batch batch;
  batch.sample_ids.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                          order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + b));
  cursor_ += b;
  std::vector<Tensor> prepared(b);
  const std::size_t workers = std::min(opt_.workers, b);
  if (workers <= 1) {
    for (std::size_t i = 0; i < b; ++i) prepared[i] = prepare(batch.sample_ids[i]);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < b; i += workers) prepared[i] = prepare(batch.sample_ids[i]);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  const std::size_t per = 3 * opt_.height * opt_.width;
  batch.images = Tensor({b, 3, opt_.height, opt_.width});
  for (std::size_t i = 0; i < b; ++i) {
    std::copy(prepared[i].data().begin(), prepared[i].data().end(), batch.images.data().begin() + i * per);
    batch.labels.push_back(index_->samples[batch.sample_ids[i]].label);
  }
  return batch;
}

std::vector<Batch> make_batches(const DatasetIndex& index, Split split, const BatchOptions& opt) {
  BatchStream stream(index, split, opt);
  std::vector<Batch> out;
  while (auto b = stream.next()) out.push_back(std::move(*b));
  return out;
}

}  // namespace eatkit

#include "eatkit/train/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

namespace eatkit {

nlohmann::json EpochRecord::to_json() const {
  nlohmann::json j{{"epoch", epoch}, {"train_loss", train_loss}, {"train_accuracy", train_accuracy}};
  if (val_loss) j["val_loss"] = *val_loss;
  if (val) j["val"] = val->to_json();
  return j;
}

int predict_class(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < logits.size(); ++k)
    if (logits[k] > logits[best]) best = k;
  return static_cast<int>(best);
}

namespace {

Tensor rows(const Tensor& batch, std::size_t begin, std::size_t end) {
  Shape s = batch.shape();
  const std::size_t per = batch.numel() / s[0];
  s[0] = end - begin;
  std::vector<double> v(batch.data().begin() + static_cast<std::ptrdiff_t>(begin * per),
                        batch.data().begin() + static_cast<std::ptrdiff_t>(end * per));
  return Tensor(std::move(s), std::move(v));
}

void check_classes(const ModelConfig& cfg, const DatasetIndex& data) {
  if (cfg.num_classes != data.num_classes()) {
    throw DataError("model has " + std::to_string(cfg.num_classes) + " classes but the dataset has " +
                    std::to_string(data.num_classes()));
  }
}

}  // namespace

EvalResult evaluate(const EatFormer& model, const NormStats& norm, const DatasetIndex& data, Split split,
                    const EvalOptions& options) {
  check_classes(model.config(), data);
  BatchStream stream(data, split,
                     BatchOptions{.batch_size = options.batch_size,
                                  .height = options.height,
                                  .width = options.width,
                                  .shuffle = false,
                                  .augment = false,
                                  .augment_options = {},
                                  .norm = norm,
                                  .workers = options.workers});
  ConfusionMatrix cm(data.num_classes(), data.classes);
  double loss_sum = 0.0;
  while (auto batch = stream.next()) {
    Tape t(false);
    Var logits = model.forward(t, t.constant(std::move(batch->images)));
    const double loss = ops::cross_entropy(logits, batch->labels).value()[0];
    loss_sum += loss * static_cast<double>(batch->labels.size());
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < batch->labels.size(); ++i) {
      accumulate(cm, batch->labels[i], predict_class(logits.value().data().subspan(i * k, k)));
    }
  }
  return {report(cm), loss_sum / static_cast<double>(stream.num_samples())};
}

EvalResult evaluate(const Checkpoint& ckpt, const DatasetIndex& data, Split split, const EvalOptions& options) {
  check_classes(ckpt.model, data);
  return evaluate(model_from_checkpoint(ckpt), ckpt.norm, data, split, options);
}

TrainResult train(const TrainConfig& cfg, const DatasetIndex& data, const TrainOptions& options) {
  cfg.model.validate();
  check_classes(cfg.model, data);
  if (cfg.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");

  TrainResult r{EatFormer(cfg.model, cfg.seed), AdamState{.options = cfg.adam, .step = 0, .m = {}, .v = {}}, {}, {}, {}, {}};
  std::size_t start = 0;
  if (options.resume) {
    const Checkpoint& ck = *options.resume;
    if (ck.seed != cfg.seed) {
      throw CheckpointError("resume checkpoint was trained with seed " + std::to_string(ck.seed) + ", not " +
                            std::to_string(cfg.seed));
    }
    restore_parameters(ck, r.model);
    restore_optimizer(ck, r.optim);
    r.norm = ck.norm;
    start = ck.epoch;
  } else {
    r.norm = compute_norm_stats(data, cfg.height, cfg.width);
  }

  auto snapshot = [&](std::size_t epoch) {
    Checkpoint c = make_checkpoint(r.model, &r.optim);
    c.norm = r.norm;
    c.classes = data.classes;
    c.epoch = epoch;
    c.seed = cfg.seed;
    c.data = data.source;
    c.train = cfg.to_json();
    return c;
  };

  r.last = snapshot(start);
  if (options.resume) {
    r.last.best_epoch = options.resume->best_epoch;
    r.last.best_val_accuracy = options.resume->best_val_accuracy;
  }
  r.best = r.last;
  std::optional<std::filesystem::path> best_path, last_path;
  std::ofstream log;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    best_path = *options.out_dir / "best.eatkpt";
    last_path = *options.out_dir / "last.eatkpt";
    if (options.resume && std::filesystem::exists(*best_path)) r.best = load_checkpoint(*best_path);
    log.open(*options.out_dir / "log.jsonl", options.resume ? std::ios::app : std::ios::trunc);
    if (!log) throw DataError("cannot write " + (*options.out_dir / "log.jsonl").string());
    if (!options.resume || !std::filesystem::exists(*best_path)) save_checkpoint(*best_path, r.best);
    save_checkpoint(*last_path, r.last);
  }

  const bool has_val = !data.indices(Split::Val).empty();
  const auto params = r.model.parameters().all();
  const std::uint64_t data_seed = derive_seed(cfg.seed, "data");
  for (std::size_t epoch = start + 1; epoch <= cfg.epochs; ++epoch) {
    BatchStream stream(data, Split::Train,
                       BatchOptions{.batch_size = cfg.batch_size,
                                    .height = cfg.height,
                                    .width = cfg.width,
                                    .seed = data_seed,
                                    .epoch = epoch - 1,
                                    .shuffle = true,
                                    .augment = cfg.augment,
                                    .augment_options = cfg.augment_options,
                                    .norm = r.norm,
                                    .workers = cfg.workers});
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0, batch_index = 0;
    while (auto batch = stream.next()) {
      const std::size_t b = batch->labels.size();
      const std::size_t chunk = cfg.micro_batch == 0 ? b : std::min(cfg.micro_batch, b);
      r.model.parameters().zero_grad();
      for (std::size_t lo = 0; lo < b; lo += chunk) {
        const std::size_t hi = std::min(b, lo + chunk);
        Tape t;
        Var x = t.constant(chunk == b ? batch->images : rows(batch->images, lo, hi));
        Var logits = r.model.forward(t, x);
        const std::span<const int> labels(batch->labels.data() + lo, hi - lo);
        Var ce = ops::cross_entropy(logits, labels);
        const double loss = ce.value()[0];
        if (!std::isfinite(loss)) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index));
        }
        t.backward(hi - lo == b ? ce : ops::scale(ce, static_cast<double>(hi - lo) / static_cast<double>(b)));
        loss_sum += loss * static_cast<double>(hi - lo);
        const std::size_t k = logits.dim(1);
        for (std::size_t i = 0; i < hi - lo; ++i) {
          correct += predict_class(logits.value().data().subspan(i * k, k)) == labels[i];
        }
      }
      adam_step(params, r.optim);
      seen += b;
      ++batch_index;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    if (has_val) {
      EvalResult ev = evaluate(r.model, r.norm, data, Split::Val,
                               {.batch_size = cfg.batch_size, .height = cfg.height, .width = cfg.width,
                                .workers = cfg.workers});
      rec.val_loss = ev.mean_loss;
      rec.val = std::move(ev.report);
    }
    const double score = has_val ? rec.val->accuracy : rec.train_accuracy;

    const std::size_t prev_best_epoch = r.last.best_epoch;
    const double prev_best = r.last.best_val_accuracy;
    r.last = snapshot(epoch);
    const bool improved = score > prev_best;
    r.last.best_epoch = improved ? epoch : prev_best_epoch;
    r.last.best_val_accuracy = improved ? score : prev_best;
    if (improved) r.best = r.last;

    if (options.out_dir) {
      log << rec.to_json().dump() << '\n';
      log.flush();
      save_checkpoint(*last_path, r.last);
      if (improved) save_checkpoint(*best_path, r.best);
    }
    if (options.on_epoch) options.on_epoch(rec);
    r.log.push_back(std::move(rec));
  }
  return r;
}

nlohmann::json ThroughputResult::to_json() const {
  return {{"batch_size", batch_size},
          {"iterations", iterations},
          {"images_per_second_mean", mean_images_per_second},
          {"images_per_second_std", stddev_images_per_second},
          {"seconds", seconds}};
}

ThroughputResult throughput_bench(const EatFormer& model, std::size_t batch_size, std::size_t iterations,
                                  std::size_t height, std::size_t width) {
  if (batch_size == 0 || iterations == 0) throw std::invalid_argument("bench needs batch >= 1 and iters >= 1");
  Tensor x({batch_size, model.config().in_channels, height, width});
  Rng rng(0);
  for (double& v : x.data()) v = rng.normal();
  auto once = [&] {
    Tape t(false);
    model.forward(t, t.constant(x));
  };
  once();
  ThroughputResult r;
  r.batch_size = batch_size;
  r.iterations = iterations;
  std::vector<double> rates;
  for (std::size_t i = 0; i < iterations; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    once();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.seconds.push_back(s);
    rates.push_back(static_cast<double>(batch_size) / s);
  }
  double mean = 0.0;
  for (double v : rates) mean += v;
  mean /= static_cast<double>(rates.size());
  double var = 0.0;
  for (double v : rates) var += (v - mean) * (v - mean);
  r.mean_images_per_second = mean;
  r.stddev_images_per_second = rates.size() > 1 ? std::sqrt(var / static_cast<double>(rates.size() - 1)) : 0.0;
  return r;
}

}  // namespace eatkit

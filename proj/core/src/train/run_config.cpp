#include "eatkit/train/run_config.hpp"

#include <functional>
#include <map>

namespace eatkit {

namespace {

using nlohmann::json;

// Binds each dotted key to a field of RunConfig.
struct Field {
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

#define EATKIT_FIELD(type, member)                          \
  Field {                                                   \
    [](const RunConfig& c) { return json(c.member); },      \
        [](RunConfig& c, const json& v) { c.member = v.get<type>(); } \
  }

const std::map<std::string, Field>& fields() {
  using Dims = std::array<std::size_t, 4>;
  static const std::map<std::string, Field> f = {
      {"model.stage_dims", EATKIT_FIELD(Dims, train.model.stage_dims)},
      {"model.stage_depths", EATKIT_FIELD(Dims, train.model.stage_depths)},
      {"model.stage_heads", EATKIT_FIELD(Dims, train.model.stage_heads)},
      {"model.split_ratio", EATKIT_FIELD(double, train.model.split_ratio)},
      {"model.local_kernel", EATKIT_FIELD(std::size_t, train.model.local_kernel)},
      {"model.msra_dilations", EATKIT_FIELD(std::vector<std::size_t>, train.model.msra_dilations)},
      {"model.stem_stride", EATKIT_FIELD(std::size_t, train.model.stem_stride)},
      {"model.in_channels", EATKIT_FIELD(std::size_t, train.model.in_channels)},
      {"model.num_classes", EATKIT_FIELD(std::size_t, train.model.num_classes)},
      {"model.ffn_expansion", EATKIT_FIELD(double, train.model.ffn_expansion)},
      {"model.md_msa_enabled", EATKIT_FIELD(bool, train.model.md_msa_enabled)},
      {"model.modulation_bypass", EATKIT_FIELD(bool, train.model.modulation_bypass)},
      {"optim.lr", EATKIT_FIELD(double, train.adam.lr)},
      {"optim.beta1", EATKIT_FIELD(double, train.adam.beta1)},
      {"optim.beta2", EATKIT_FIELD(double, train.adam.beta2)},
      {"optim.eps", EATKIT_FIELD(double, train.adam.eps)},
      {"train.epochs", EATKIT_FIELD(std::size_t, train.epochs)},
      {"train.batch_size", EATKIT_FIELD(std::size_t, train.batch_size)},
      {"train.micro_batch", EATKIT_FIELD(std::size_t, train.micro_batch)},
      {"train.seed", EATKIT_FIELD(std::uint64_t, train.seed)},
      {"train.workers", EATKIT_FIELD(std::size_t, train.workers)},
      {"data.height", EATKIT_FIELD(std::size_t, train.height)},
      {"data.width", EATKIT_FIELD(std::size_t, train.width)},
      {"data.root", EATKIT_FIELD(std::string, data_root)},
      {"data.synthetic", EATKIT_FIELD(bool, synthetic)},
      {"data.synthetic_classes", EATKIT_FIELD(std::size_t, synthetic_classes)},
      {"data.synthetic_per_class", EATKIT_FIELD(std::size_t, synthetic_per_class)},
      {"data.synthetic_noise", EATKIT_FIELD(double, synthetic_noise)},
      {"data.split_train", EATKIT_FIELD(double, split.train)},
      {"data.split_val", EATKIT_FIELD(double, split.val)},
      {"data.split_test", EATKIT_FIELD(double, split.test)},
      {"augment.enabled", EATKIT_FIELD(bool, train.augment)},
      {"augment.flip_probability", EATKIT_FIELD(double, train.augment_options.flip_probability)},
      {"augment.rotate_probability", EATKIT_FIELD(double, train.augment_options.rotate_probability)},
      {"augment.max_rotation_degrees", EATKIT_FIELD(double, train.augment_options.max_rotation_degrees)},
      {"augment.zoom_probability", EATKIT_FIELD(double, train.augment_options.zoom_probability)},
      {"augment.zoom_min", EATKIT_FIELD(double, train.augment_options.zoom_min)},
      {"augment.zoom_max", EATKIT_FIELD(double, train.augment_options.zoom_max)},
  };
  return f;
}

#undef EATKIT_FIELD

bool is_train_key(const std::string& key) {
  return !key.starts_with("data.root") && !key.starts_with("data.synthetic") && !key.starts_with("data.split");
}

}  // namespace

void RunConfig::merge(const json& flat) {
  if (!flat.is_object()) throw ConfigError("config must be a JSON object with dotted keys");
  for (const auto& [key, value] : flat.items()) {
    auto it = fields().find(key);
    if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
    try {
      it->second.set(*this, value);
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + key + "' has the wrong type: " + value.dump());
    }
  }
}

RunConfig RunConfig::from_json(const json& flat) {
  RunConfig c;
  c.merge(flat);
  return c;
}

json RunConfig::to_json() const {
  json j = json::object();
  for (const auto& [key, f] : fields()) j[key] = f.get(*this);
  return j;
}

void RunConfig::validate() const {
  train.model.validate();
  if (train.epochs > 100000) throw ConfigError("train.epochs is unreasonably large");
  if (train.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (!(train.adam.lr > 0.0)) throw ConfigError("optim.lr must be > 0");
  if (!(train.adam.beta1 >= 0.0 && train.adam.beta1 < 1.0)) throw ConfigError("optim.beta1 must lie in [0, 1)");
  if (!(train.adam.beta2 >= 0.0 && train.adam.beta2 < 1.0)) throw ConfigError("optim.beta2 must lie in [0, 1)");
  if (!(train.adam.eps > 0.0)) throw ConfigError("optim.eps must be > 0");
  const std::size_t stride = train.model.total_stride();
  if (train.height == 0 || train.width == 0 || train.height % 32 != 0 || train.width % 32 != 0 ||
      train.height % stride != 0 || train.width % stride != 0) {
    throw ConfigError("data.height and data.width must be positive multiples of 32 and of the model stride " +
                      std::to_string(stride));
  }
  try {
    split.validate();
  } catch (const std::invalid_argument&) {
    throw ConfigError("data.split_train, data.split_val and data.split_test must be non-negative and sum to 1");
  }
  const auto& a = train.augment_options;
  for (double p : {a.flip_probability, a.rotate_probability, a.zoom_probability}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augment probabilities must lie in [0, 1]");
  }
  if (!(a.zoom_min > 0.0 && a.zoom_min <= a.zoom_max)) throw ConfigError("augment.zoom_min must be > 0 and <= zoom_max");
  if (synthetic && synthetic_classes != train.model.num_classes) {
    throw ConfigError("data.synthetic_classes must equal model.num_classes");
  }
  if (synthetic && synthetic_classes < 2) throw ConfigError("data.synthetic_classes must be >= 2");
}

nlohmann::json TrainConfig::to_json() const {
  RunConfig rc;
  rc.train = *this;
  json all = rc.to_json(), out = json::object();
  for (const auto& [key, value] : all.items())
    if (is_train_key(key)) out[key] = value;
  return out;
}

RunConfig run_config_from_checkpoint(const Checkpoint& ckpt) {
  RunConfig cfg = RunConfig::from_json(ckpt.train);
  cfg.train.model = ckpt.model;
  cfg.train.seed = ckpt.seed;
  const json& d = ckpt.data;
  if (!d.is_object()) return cfg;
  try {
    if (d.contains("split")) cfg.split = {d.at("split").at(0), d.at("split").at(1), d.at("split").at(2)};
    if (d.value("kind", "") == "synthetic") {
      cfg.synthetic = true;
      cfg.synthetic_classes = d.at("classes");
      cfg.synthetic_per_class = d.at("per_class");
      cfg.synthetic_noise = d.at("noise");
    } else if (d.value("kind", "") == "directory") {
      cfg.data_root = d.at("root");
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint data descriptor: ") + e.what());
  }
  return cfg;
}

DatasetIndex load_dataset(const RunConfig& cfg) {
  if (cfg.synthetic) {
    return synth_dataset({.classes = cfg.synthetic_classes,
                          .per_class = cfg.synthetic_per_class,
                          .height = cfg.train.height,
                          .width = cfg.train.width,
                          .seed = cfg.train.seed,
                          .noise = cfg.synthetic_noise,
                          .ratios = cfg.split});
  }
  if (cfg.data_root.empty()) throw ConfigError("no data source: set data.root or data.synthetic");
  return scan_dataset(cfg.data_root, cfg.split, cfg.train.seed);
}

}  // namespace eatkit

#include "eatkit/train/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace eatkit {

namespace {

constexpr std::string_view kMagic = "eatkpt 1";

void put_f64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<double>(bits);
}

nlohmann::json norm_json(const NormStats& n) { return {{"mean", n.mean}, {"std", n.stddev}}; }

}  // namespace

nlohmann::json Checkpoint::header() const {
  return {{"format", "eatkpt"},
          {"version", 1},
          {"model", model},
          {"norm", norm_json(norm)},
          {"classes", classes},
          {"epoch", epoch},
          {"seed", seed},
          {"optim", {{"step", optim_step}, {"lr", adam.lr}, {"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}},
          {"best", {{"epoch", best_epoch}, {"val_accuracy", best_val_accuracy}}},
          {"data", data},
          {"train", train}};
}

Checkpoint make_checkpoint(const EatFormer& model, const AdamState* optim) {
  Checkpoint c;
  c.model = model.config();
  for (const Parameter* p : model.parameters().all()) c.tensors.emplace(p->name, p->value);
  if (optim != nullptr) {
    c.optim_step = optim->step;
    c.adam = optim->options;
    for (const auto& [name, t] : optim->m) c.tensors.emplace("optim.m." + name, t);
    for (const auto& [name, t] : optim->v) c.tensors.emplace("optim.v." + name, t);
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header = ckpt.header();
  auto& index = header["tensors"] = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : ckpt.tensors) {
    index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}});
    for (double v : t.data()) put_f64(payload, v);
  }
  header["payload_bytes"] = payload.size();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out << kMagic << '\n' << header.dump() << '\n';
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const std::string where = path.string() + ": ";
  const std::size_t eol1 = bytes.find('\n');
  if (eol1 == std::string::npos || bytes.compare(0, eol1, kMagic) != 0) {
    throw CheckpointError(where + "not an eatkpt version 1 file");
  }
  const std::size_t eol2 = bytes.find('\n', eol1 + 1);
  if (eol2 == std::string::npos) throw CheckpointError(where + "missing header line");
  Checkpoint c;
  try {
    const auto h = nlohmann::json::parse(bytes.substr(eol1 + 1, eol2 - eol1 - 1));
    c.model = h.at("model").get<ModelConfig>();
    c.norm.mean = h.at("norm").at("mean").get<std::array<double, 3>>();
    c.norm.stddev = h.at("norm").at("std").get<std::array<double, 3>>();
    c.classes = h.at("classes").get<std::vector<std::string>>();
    c.epoch = h.at("epoch").get<std::size_t>();
    c.seed = h.at("seed").get<std::uint64_t>();
    const auto& o = h.at("optim");
    c.optim_step = o.at("step").get<std::uint64_t>();
    c.adam = {o.at("lr").get<double>(), o.at("beta1").get<double>(), o.at("beta2").get<double>(),
              o.at("eps").get<double>()};
    c.best_epoch = h.at("best").at("epoch").get<std::size_t>();
    c.best_val_accuracy = h.at("best").at("val_accuracy").get<double>();
    c.data = h.at("data");
    c.train = h.at("train");
    const std::size_t payload_bytes = h.at("payload_bytes").get<std::size_t>();
    const std::size_t start = eol2 + 1;
    if (bytes.size() - start != payload_bytes) {
      throw CheckpointError(where + "payload is " + std::to_string(bytes.size() - start) + " bytes, header says " +
                            std::to_string(payload_bytes));
    }
    const auto* base = reinterpret_cast<const unsigned char*>(bytes.data()) + start;
    for (const auto& e : h.at("tensors")) {
      Tensor t(e.at("shape").get<Shape>());
      const std::size_t offset = e.at("offset").get<std::size_t>();
      if (offset + t.numel() * 8 > payload_bytes) {
        throw CheckpointError(where + "tensor " + e.at("name").get<std::string>() + " overruns the payload");
      }
      for (std::size_t i = 0; i < t.numel(); ++i) t[i] = get_f64(base + offset + 8 * i);
      c.tensors.emplace(e.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(where + "malformed header: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(where + e.what());
  }
  return c;
}

void restore_parameters(const Checkpoint& ckpt, EatFormer& model) {
  if (!(ckpt.model == model.config())) {
    throw CheckpointError("checkpoint model config " + nlohmann::json(ckpt.model).dump() +
                          " does not match " + nlohmann::json(model.config()).dump());
  }
  for (Parameter* p : model.parameters().all()) {
    auto it = ckpt.tensors.find(p->name);
    if (it == ckpt.tensors.end()) throw CheckpointError("checkpoint lacks parameter " + p->name);
    if (it->second.shape() != p->value.shape()) {
      throw CheckpointError("checkpoint parameter " + p->name + " has shape " + to_string(it->second.shape()) +
                            ", model expects " + to_string(p->value.shape()));
    }
    p->value = it->second;
  }
}

void restore_optimizer(const Checkpoint& ckpt, AdamState& optim) {
  optim = AdamState{};
  optim.options = ckpt.adam;
  optim.step = ckpt.optim_step;
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.starts_with("optim.m.")) optim.m.emplace(name.substr(8), t);
    if (name.starts_with("optim.v.")) optim.v.emplace(name.substr(8), t);
  }
}

EatFormer model_from_checkpoint(const Checkpoint& ckpt) {
  EatFormer model(ckpt.model, ckpt.seed);
  restore_parameters(ckpt, model);
  return model;
}

}  // namespace eatkit

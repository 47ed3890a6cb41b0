#include "commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "eatkit/train/run_config.hpp"
#include "eatkit/train/trainer.hpp"
#include "eatkit/train/verify.hpp"

namespace eatkit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
}

RunConfig load_config(const std::string& path) {
  RunConfig cfg;
  if (!path.empty()) cfg.merge(read_json(path));
  return cfg;
}

// "key=value" where value is parsed as JSON, falling back to a plain string.
void apply_override(RunConfig& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + kv + "'");
  const std::string key = kv.substr(0, eq), text = kv.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  cfg.merge(json{{key, value}});
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

EvalOptions eval_options(const TrainConfig& t) {
  return {.batch_size = t.batch_size, .height = t.height, .width = t.width, .workers = t.workers};
}

}  // namespace

int run_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = load_config(a.config);
  for (const std::string& kv : a.set) apply_override(cfg, kv);
  if (a.synthetic) cfg.synthetic = true;
  if (!a.data.empty()) {
    cfg.data_root = a.data;
    cfg.synthetic = false;
  }
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.seed) cfg.train.seed = *a.seed;
  if (!cfg.synthetic && cfg.data_root.empty()) throw ConfigError("no data source: pass --data DIR or --synthetic");
  if (a.out.empty()) throw ConfigError("--out is required");
  cfg.validate();

  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_text(dir / "config.json", cfg.to_json().dump(2) + "\n");

  const DatasetIndex data = load_dataset(cfg);
  for (const std::string& w : data.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  for (const std::string& n : cfg.train.model.split_adjustments()) std::fprintf(stderr, "note: %s\n", n.c_str());

  TrainOptions opts;
  opts.out_dir = dir;
  if (!a.quiet) {
    opts.on_epoch = [&](const EpochRecord& r) {
      out << "epoch " << r.epoch << "  loss " << fmt("%.6f", r.train_loss) << "  acc "
          << fmt("%.4f", r.train_accuracy);
      if (r.val) out << "  val_loss " << fmt("%.6f", *r.val_loss) << "  val_acc " << fmt("%.4f", r.val->accuracy);
      out << "\n" << std::flush;
    };
  }
  TrainResult res = train(cfg.train, data, opts);

  json report{{"best_epoch", res.best.epoch}, {"epochs", res.last.epoch}};
  const EvalOptions eo = eval_options(cfg.train);
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    if (data.indices(s).empty()) continue;
    const EvalResult ev = evaluate(res.best, data, s, eo);
    report[std::string(to_string(s))] = {{"loss", ev.mean_loss}, {"metrics", ev.report.to_json()}};
  }
  write_text(dir / "report.json", report.dump(2) + "\n");
  if (!a.quiet) {
    out << "best epoch " << res.best.epoch;
    if (report.contains("test")) out << "  test accuracy " << fmt("%.4f", report["test"]["metrics"]["accuracy"]);
    out << "\nwrote " << dir.string() << "\n";
  }
  return kOk;
}

int run_eval(const EvalArgs& a, std::ostream& out) {
  const Split split = [&] {
    try {
      return parse_split(a.split);
    } catch (const std::invalid_argument&) {
      throw ConfigError("--split must be train, val or test, got '" + a.split + "'");
    }
  }();
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  RunConfig cfg = run_config_from_checkpoint(ckpt);
  if (!a.data.empty()) {
    cfg.data_root = a.data;
    cfg.synthetic = false;
  } else if (a.synthetic) {
    cfg.synthetic = true;
  }
  if (!cfg.synthetic && cfg.data_root.empty()) throw ConfigError("no data source: pass --data DIR or --synthetic");
  const DatasetIndex data = load_dataset(cfg);
  if (data.indices(split).empty()) throw DataError("split '" + a.split + "' is empty");
  const EvalResult ev = evaluate(ckpt, data, split, eval_options(cfg.train));
  if (a.json) {
    json j{{"checkpoint_epoch", ckpt.epoch}, {"loss", ev.mean_loss}, {"metrics", ev.report.to_json()},
           {"split", a.split}};
    out << j.dump(2) << "\n";
  } else {
    out << "split " << a.split << "  samples " << ev.report.total << "  loss " << fmt("%.6f", ev.mean_loss) << "\n"
        << ev.report.to_table();
  }
  return kOk;
}

int run_verify(const VerifyArgs& a, std::ostream& out) {
  const RunConfig cfg = load_config(a.config);
  const VerifyLedger ledger =
      verify(cfg.train.model, {.seed = a.seed, .filter = a.filter, .fault_op = a.fault_op});
  if (a.json) {
    out << ledger.to_json().dump(2) << "\n";
  } else {
    std::size_t failed = 0;
    for (const VerifyCheck& c : ledger.checks) {
      char line[160];
      std::snprintf(line, sizeof line, "%-4s  %-22s  %-10.3g <= %-8.3g  ", c.passed ? "PASS" : "FAIL",
                    c.name.c_str(), c.value, c.tolerance);
      out << line << c.detail << "\n";
      failed += !c.passed;
    }
    out << ledger.checks.size() - failed << "/" << ledger.checks.size() << " checks passed (seed " << a.seed
        << ")\n";
  }
  if (ledger.checks.empty()) return kFailed;
  return ledger.passed() ? kOk : kFailed;
}

int run_inspect(const InspectArgs& a, std::ostream& out) {
  const RunConfig cfg = load_config(a.config);
  const ModelConfig& m = cfg.train.model;
  m.validate();
  if (a.size == 0 || a.size % m.total_stride() != 0) {
    throw ConfigError("--size must be a positive multiple of " + std::to_string(m.total_stride()));
  }
  EatFormer model(m, cfg.train.seed);
  const ParameterStore& ps = model.parameters();

  json stages = json::array();
  {
    Tape t(false);
    const BackboneOutput bo = model.backbone().forward(t, t.constant(Tensor({1, m.in_channels, a.size, a.size})));
    for (std::size_t s = 0; s < 4; ++s) {
      const Shape& sh = bo.stages[s].shape();
      stages.push_back({{"stage", s + 1}, {"channels", sh[1]}, {"height", sh[2]}, {"width", sh[3]},
                        {"depth", m.stage_depths[s]}, {"heads", m.stage_heads[s]},
                        {"global_channels", m.global_channels(s)}});
    }
  }

  json modules = json::array();
  auto add_module = [&](const std::string& name) {
    modules.push_back({{"module", name}, {"parameters", ps.scalar_count(name + ".")}});
  };
  add_module("stem");
  for (std::size_t s = 0; s < 4; ++s) {
    if (s > 0) add_module("down" + std::to_string(s + 1));
    for (std::size_t b = 0; b < m.stage_depths[s]; ++b)
      for (const char* part : {"msra", "gli", "ffn"})
        add_module("stage" + std::to_string(s + 1) + ".block" + std::to_string(b) + "." + part);
  }
  add_module("head");

  json gli = json::array();
  {
    ParameterStore store;
    Rng rng(0);
    Gli ref(ModuleBuilder(store, rng, "gli"), 64, 32, 2, 3, m.md_msa_enabled, false);
    gli.push_back({{"where", "reference"}, {"C", 64}, {"C_g", 32}, {"k", 3},
                   {"formula", gli_param_count(64, 32, 3)}, {"census", store.scalar_count()}});
  }
  for (std::size_t s = 0; s < 4; ++s) {
    if (m.stage_depths[s] == 0) continue;
    const auto c = static_cast<std::int64_t>(m.stage_dims[s]);
    const auto cg = static_cast<std::int64_t>(m.global_channels(s));
    const auto k = static_cast<std::int64_t>(m.local_kernel);
    const std::string prefix = "stage" + std::to_string(s + 1) + ".block0.gli.";
    gli.push_back({{"where", prefix.substr(0, prefix.size() - 1)}, {"C", c}, {"C_g", cg}, {"k", k},
                   {"formula", gli_param_count(c, cg, k)}, {"census", ps.scalar_count(prefix)}});
  }

  if (a.json) {
    out << json{{"input", {a.size, a.size}}, {"stages", stages}, {"modules", modules}, {"gli", gli},
                {"total_parameters", ps.scalar_count()}, {"split_adjustments", m.split_adjustments()}}
               .dump(2)
        << "\n";
    return kOk;
  }
  char line[160];
  out << "input " << a.size << "x" << a.size << "\n\nstage  channels  resolution  depth  heads  C_g\n";
  for (const json& s : stages) {
    std::snprintf(line, sizeof line, "%5d  %8d  %4dx%-5d  %5d  %5d  %3d\n", s["stage"].get<int>(),
                  s["channels"].get<int>(), s["height"].get<int>(), s["width"].get<int>(), s["depth"].get<int>(),
                  s["heads"].get<int>(), s["global_channels"].get<int>());
    out << line;
  }
  out << "\nmodule                 parameters\n";
  for (const json& mo : modules) {
    std::snprintf(line, sizeof line, "%-22s %10llu\n", mo["module"].get<std::string>().c_str(),
                  mo["parameters"].get<unsigned long long>());
    out << line;
  }
  std::snprintf(line, sizeof line, "%-22s %10zu\n", "total", ps.scalar_count());
  out << line << "\nGLI parameters: closed form vs census\n";
  for (const json& g : gli) {
    std::snprintf(line, sizeof line, "%-18s C=%-4lld C_g=%-4lld k=%-2lld formula %8lld  census %8llu\n",
                  g["where"].get<std::string>().c_str(), g["C"].get<long long>(), g["C_g"].get<long long>(),
                  g["k"].get<long long>(), g["formula"].get<long long>(), g["census"].get<unsigned long long>());
    out << line;
  }
  for (const std::string& n : m.split_adjustments()) out << "note: " << n << "\n";
  return kOk;
}

int run_bench(const BenchArgs& a, std::ostream& out) {
  std::optional<EatFormer> model;
  std::size_t size = a.size;
  if (!a.checkpoint.empty()) {
    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    model.emplace(model_from_checkpoint(ckpt));
    if (ckpt.train.contains("data.height")) size = ckpt.train.at("data.height");
  } else {
    const RunConfig cfg = load_config(a.config);
    cfg.train.model.validate();
    model.emplace(cfg.train.model, cfg.train.seed);
  }
  if (size % model->config().total_stride() != 0) {
    throw ConfigError("--size must be a multiple of " + std::to_string(model->config().total_stride()));
  }
  if (a.batch == 0 || a.iters == 0) throw ConfigError("--batch and --iters must be >= 1");
  const ThroughputResult r = throughput_bench(*model, a.batch, a.iters, size, size);
  if (a.json) {
    out << r.to_json().dump(2) << "\n";
  } else {
    out << "batch " << a.batch << "  input " << size << "x" << size << "  iters " << a.iters << "\n"
        << "images/s " << fmt("%.2f", r.mean_images_per_second) << " +- "
        << fmt("%.2f", r.stddev_images_per_second) << "\n";
  }
  return kOk;
}

}  // namespace eatkit::cli

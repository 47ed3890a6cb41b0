#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <unistd.h>

#include "eatkit/train/run_config.hpp"
#include "eatkit/train/trainer.hpp"

namespace eatkit {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(fs::temp_directory_path() / ("eatkit_" + name + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.stage_dims = {8, 16, 16, 16};
  c.stage_depths = {1, 1, 1, 1};
  c.stage_heads = {1, 2, 2, 2};
  c.msra_dilations = {1, 2};
  c.ffn_expansion = 2.0;
  return c;
}

TrainConfig tiny_train(std::size_t epochs) {
  TrainConfig c;
  c.model = tiny_model();
  c.epochs = epochs;
  c.batch_size = 8;
  c.height = 32;
  c.width = 32;
  c.seed = 5;
  c.workers = 1;
  return c;
}

const DatasetIndex& tiny_data() {
  static const DatasetIndex d = synth_dataset({.classes = 4, .per_class = 8, .height = 32, .width = 32, .seed = 5});
  return d;
}

EvalOptions tiny_eval() { return {.batch_size = 8, .height = 32, .width = 32, .workers = 1}; }

void expect_same_parameters(const EatFormer& a, const EatFormer& b) {
  const auto pa = a.parameters().sorted();
  const auto pb = b.parameters().sorted();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i]->name, pb[i]->name);
    ASSERT_EQ(pa[i]->value.shape(), pb[i]->value.shape());
    for (std::size_t j = 0; j < pa[i]->value.numel(); ++j) {
      ASSERT_EQ(pa[i]->value[j], pb[i]->value[j]) << pa[i]->name << "[" << j << "]";
    }
  }
}

// --- Adam ------------------------------------------------------------------

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p("p", Tensor({1}, {0.0}));
  p.grad[0] = 1.0;
  AdamState st;
  Parameter* ps[] = {&p};
  adam_step(ps, st);
  // m̂ = 1, v̂ = 1, so the update is lr / (1 + eps).
  EXPECT_NEAR(p.value[0], -0.005 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, SecondStepMatchesHandRecurrence) {
  Parameter p("p", Tensor({1}, {0.0}));
  AdamState st;
  Parameter* ps[] = {&p};
  p.grad[0] = 1.0;
  adam_step(ps, st);
  p.grad[0] = -2.0;
  adam_step(ps, st);
  const double m = 0.9 * 0.1 + 0.1 * -2.0;
  const double v = 0.999 * 0.001 + 0.001 * 4.0;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(p.value[0], -0.005 / (1.0 + 1e-8) - 0.005 * mh / (std::sqrt(vh) + 1e-8), 1e-15);
}

TEST(Adam, ZeroGradientLeavesParameter) {
  Parameter p("p", Tensor({3}, {1.0, -2.0, 0.5}));
  AdamState st;
  Parameter* ps[] = {&p};
  adam_step(ps, st);
  EXPECT_EQ(p.value[0], 1.0);
  EXPECT_EQ(p.value[1], -2.0);
  EXPECT_EQ(p.value[2], 0.5);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, NonFiniteGradientNamesParameterAndChangesNothing) {
  Parameter a("first", Tensor({2}, {1.0, 1.0}));
  Parameter b("second.weight", Tensor({2}, {1.0, 1.0}));
  a.grad.fill(1.0);
  b.grad[1] = std::numeric_limits<double>::quiet_NaN();
  AdamState st;
  Parameter* ps[] = {&a, &b};
  try {
    adam_step(ps, st);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("second.weight"), std::string::npos) << e.what();
  }
  EXPECT_EQ(a.value[0], 1.0);
  EXPECT_EQ(st.step, 0u);
}

// --- checkpoints -----------------------------------------------------------

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir("ckpt_roundtrip");
  EatFormer m(tiny_model(), 3);
  randomize_parameters(m.parameters(), 9, 1.0);
  AdamState st;
  st.step = 7;
  st.m["head.cls.bias"] = Tensor({4}, {1.0 / 3.0, -0.0, 1e-300, 2.5});
  st.v["head.cls.bias"] = Tensor({4}, {1.0, 2.0, 3.0, 4.0});
  Checkpoint c = make_checkpoint(m, &st);
  c.classes = {"a", "b", "c", "d"};
  c.norm = {{0.1, 0.2, 0.3}, {1.5, 2.5, 3.5}};
  c.epoch = 12;
  c.seed = 99;
  c.best_epoch = 10;
  c.best_val_accuracy = 0.875;
  save_checkpoint(dir.path() / "a.eatkpt", c);

  Checkpoint r = load_checkpoint(dir.path() / "a.eatkpt");
  EXPECT_EQ(r.header(), c.header());
  EXPECT_EQ(r.model, c.model);
  EXPECT_EQ(r.norm, c.norm);
  EXPECT_EQ(r.optim_step, 7u);

  EatFormer back = model_from_checkpoint(r);
  expect_same_parameters(m, back);
  AdamState st2;
  restore_optimizer(r, st2);
  EXPECT_EQ(st2.step, 7u);
  ASSERT_TRUE(st2.m.contains("head.cls.bias"));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(std::bit_cast<std::uint64_t>(st2.m.at("head.cls.bias")[i]),
              std::bit_cast<std::uint64_t>(st.m.at("head.cls.bias")[i]));
  }

  // Saving the reloaded checkpoint reproduces the file.
  save_checkpoint(dir.path() / "b.eatkpt", r);
  EXPECT_EQ(slurp(dir.path() / "a.eatkpt"), slurp(dir.path() / "b.eatkpt"));
}

TEST(Checkpoint, ConfigMismatchIsHardError) {
  EatFormer m(tiny_model(), 3);
  Checkpoint c = make_checkpoint(m, nullptr);
  ModelConfig other = tiny_model();
  other.split_ratio = 0.25;
  EatFormer o(other, 3);
  EXPECT_THROW(restore_parameters(c, o), CheckpointError);
}

TEST(Checkpoint, MissingTensorIsHardError) {
  EatFormer m(tiny_model(), 3);
  Checkpoint c = make_checkpoint(m, nullptr);
  c.tensors.erase("head.cls.weight");
  EXPECT_THROW(model_from_checkpoint(c), CheckpointError);
}

TEST(Checkpoint, TruncatedAndForeignFilesAreRejected) {
  TempDir dir("ckpt_bad");
  EatFormer m(tiny_model(), 3);
  save_checkpoint(dir.path() / "ok.eatkpt", make_checkpoint(m, nullptr));
  const std::string bytes = slurp(dir.path() / "ok.eatkpt");
  {
    std::ofstream out(dir.path() / "short.eatkpt", std::ios::binary);
    out << bytes.substr(0, bytes.size() - 5);
  }
  {
    std::ofstream out(dir.path() / "foreign.eatkpt", std::ios::binary);
    out << "P5\n2 2\n255\n....";
  }
  EXPECT_THROW(load_checkpoint(dir.path() / "short.eatkpt"), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir.path() / "foreign.eatkpt"), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir.path() / "absent.eatkpt"), CheckpointError);
}

// --- training --------------------------------------------------------------

TEST(Train, ZeroEpochsGivesInitialWeightsAndEmptyLog) {
  TempDir dir("train_zero");
  TrainResult r = train(tiny_train(0), tiny_data(), {.resume = std::nullopt, .out_dir = dir.path(), .on_epoch = {}});
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(r.last.epoch, 0u);
  EatFormer fresh(tiny_model(), 5);
  expect_same_parameters(fresh, model_from_checkpoint(r.last));
  expect_same_parameters(fresh, model_from_checkpoint(load_checkpoint(dir.path() / "best.eatkpt")));
  EXPECT_EQ(slurp(dir.path() / "log.jsonl"), "");
}

TEST(Train, IdenticalRunsWriteIdenticalLogs) {
  TempDir a("train_det_a"), b("train_det_b");
  train(tiny_train(2), tiny_data(), {.resume = std::nullopt, .out_dir = a.path(), .on_epoch = {}});
  train(tiny_train(2), tiny_data(), {.resume = std::nullopt, .out_dir = b.path(), .on_epoch = {}});
  const std::string la = slurp(a.path() / "log.jsonl");
  EXPECT_FALSE(la.empty());
  EXPECT_EQ(la, slurp(b.path() / "log.jsonl"));
  EXPECT_EQ(slurp(a.path() / "last.eatkpt"), slurp(b.path() / "last.eatkpt"));
}

TEST(Train, WorkerCountDoesNotChangeTrajectory) {
  TrainConfig one = tiny_train(1), three = tiny_train(1);
  three.workers = 3;
  TrainResult a = train(one, tiny_data());
  TrainResult b = train(three, tiny_data());
  EXPECT_EQ(a.log[0].to_json().dump(), b.log[0].to_json().dump());
  expect_same_parameters(a.model, b.model);
}

TEST(Train, ResumeMatchesUnbrokenRun) {
  TempDir dir("train_resume");
  TrainResult full = train(tiny_train(3), tiny_data());

  train(tiny_train(1), tiny_data(), {.resume = std::nullopt, .out_dir = dir.path(), .on_epoch = {}});
  Checkpoint mid = load_checkpoint(dir.path() / "last.eatkpt");
  ASSERT_EQ(mid.epoch, 1u);
  TrainResult rest = train(tiny_train(3), tiny_data(), {.resume = mid, .out_dir = dir.path(), .on_epoch = {}});

  ASSERT_EQ(rest.log.size(), 2u);
  for (std::size_t e = 0; e < 2; ++e) EXPECT_EQ(rest.log[e].to_json().dump(), full.log[e + 1].to_json().dump());
  expect_same_parameters(full.model, rest.model);
  EXPECT_EQ(rest.optim.step, full.optim.step);

  std::string expected;
  for (const auto& rec : full.log) expected += rec.to_json().dump() + "\n";
  EXPECT_EQ(slurp(dir.path() / "log.jsonl"), expected);
  // The best file keeps the settings of whichever invocation wrote it.
  nlohmann::json best = load_checkpoint(dir.path() / "best.eatkpt").header(), expect_best = full.best.header();
  best.erase("train");
  expect_best.erase("train");
  EXPECT_EQ(best, expect_best);
}

TEST(Train, ResumeWithDifferentSeedIsRejected) {
  TrainResult r = train(tiny_train(0), tiny_data());
  TrainConfig other = tiny_train(1);
  other.seed = 6;
  EXPECT_THROW(train(other, tiny_data(), {.resume = r.last, .out_dir = std::nullopt, .on_epoch = {}}),
               CheckpointError);
}

TEST(Train, MicroBatchingMatchesFullBatch) {
  TrainConfig full = tiny_train(1), micro = tiny_train(1);
  micro.micro_batch = 3;
  TrainResult a = train(full, tiny_data());
  TrainResult b = train(micro, tiny_data());
  EXPECT_NEAR(a.log[0].train_loss, b.log[0].train_loss, 1e-9);
  const auto pa = a.model.parameters().sorted();
  const auto pb = b.model.parameters().sorted();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i]->value.numel(); ++j) ASSERT_NEAR(pa[i]->value[j], pb[i]->value[j], 1e-8);
}

TEST(Train, NonFiniteLossNamesEpochAndBatch) {
  TrainResult r = train(tiny_train(0), tiny_data());
  Checkpoint bad = r.last;
  bad.tensors.at("head.cls.bias").fill(std::numeric_limits<double>::quiet_NaN());
  try {
    train(tiny_train(1), tiny_data(), {.resume = bad, .out_dir = std::nullopt, .on_epoch = {}});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch 0"), std::string::npos) << msg;
  }
}

TEST(Train, ClassCountMismatchIsDataError) {
  TrainConfig c = tiny_train(1);
  c.model.num_classes = 3;
  EXPECT_THROW(train(c, tiny_data()), DataError);
}

TEST(Train, LogRecordsCarryNoTimings) {
  TrainResult r = train(tiny_train(1), tiny_data());
  const nlohmann::json j = r.log[0].to_json();
  for (const auto& [k, v] : j.items()) {
    EXPECT_EQ(k.find("time"), std::string::npos) << k;
    EXPECT_EQ(k.find("second"), std::string::npos) << k;
  }
  EXPECT_TRUE(j.contains("val"));
  EXPECT_EQ(j.at("epoch"), 1);
}

// --- evaluation ------------------------------------------------------------

TEST(Evaluate, ZeroHeadPredictsClassZero) {
  EatFormer m(tiny_model(), 1);
  randomize_parameters(m.parameters(), 2, 0.3);
  for (Parameter* p : m.parameters().with_prefix("head.cls")) p->value.fill(0.0);
  const DatasetIndex& d = tiny_data();
  EvalResult r = evaluate(m, compute_norm_stats(d, 32, 32), d, Split::Test, tiny_eval());
  std::size_t zeros = 0;
  const auto test = d.indices(Split::Test);
  for (std::size_t i : test) zeros += d.samples[i].label == 0;
  EXPECT_EQ(r.report.accuracy, static_cast<double>(zeros) / static_cast<double>(test.size()));
  EXPECT_NEAR(r.mean_loss, std::log(4.0), 1e-12);
}

TEST(Evaluate, CheckpointRoundTripReproducesReport) {
  TempDir dir("eval_ckpt");
  TrainResult r = train(tiny_train(2), tiny_data(), {.resume = std::nullopt, .out_dir = dir.path(), .on_epoch = {}});
  EvalResult before = evaluate(r.model, r.norm, tiny_data(), Split::Test, tiny_eval());
  EvalResult after = evaluate(load_checkpoint(dir.path() / "last.eatkpt"), tiny_data(), Split::Test, tiny_eval());
  EXPECT_EQ(before.report.to_json_string(), after.report.to_json_string());
  EXPECT_EQ(before.mean_loss, after.mean_loss);
}

TEST(Evaluate, IndependentOfBatchSizeAndWorkers) {
  EatFormer m(tiny_model(), 1);
  randomize_parameters(m.parameters(), 4, 0.3);
  const DatasetIndex& d = tiny_data();
  const NormStats ns = compute_norm_stats(d, 32, 32);
  EvalResult a = evaluate(m, ns, d, Split::Train, tiny_eval());
  EvalResult b = evaluate(m, ns, d, Split::Train, {.batch_size = 5, .height = 32, .width = 32, .workers = 2});
  EXPECT_EQ(a.report.to_json(), b.report.to_json());
  EXPECT_NEAR(a.mean_loss, b.mean_loss, 1e-12);
}

TEST(Evaluate, ClassCountMismatchIsRejected) {
  ModelConfig c = tiny_model();
  c.num_classes = 5;
  EatFormer m(c, 1);
  Checkpoint ck = make_checkpoint(m, nullptr);
  EXPECT_THROW(evaluate(ck, tiny_data(), Split::Test, tiny_eval()), DataError);
}

TEST(Evaluate, PredictClassBreaksTiesLow) {
  const double l[] = {0.5, 2.0, 2.0, -1.0};
  EXPECT_EQ(predict_class(l), 1);
  const double z[] = {0.0, 0.0, 0.0};
  EXPECT_EQ(predict_class(z), 0);
}

TEST(Throughput, SingleIterationHasZeroSpread) {
  EatFormer m(tiny_model(), 1);
  ThroughputResult r = throughput_bench(m, 2, 1, 32, 32);
  EXPECT_EQ(r.iterations, 1u);
  EXPECT_EQ(r.stddev_images_per_second, 0.0);
  EXPECT_GT(r.mean_images_per_second, 0.0);
  EXPECT_THROW(throughput_bench(m, 0, 1, 32, 32), std::invalid_argument);
}

// --- run config ------------------------------------------------------------

TEST(RunConfig, RoundTripsThroughJson) {
  RunConfig c;
  c.train.model.split_ratio = 0.25;
  c.train.epochs = 3;
  c.synthetic = true;
  c.train.augment_options.zoom_max = 1.2;
  RunConfig r = RunConfig::from_json(c.to_json());
  EXPECT_EQ(r.to_json(), c.to_json());
  EXPECT_EQ(r.train.model, c.train.model);
}

TEST(RunConfig, UnknownKeyIsNamed) {
  try {
    RunConfig::from_json({{"model.spilt_ratio", 0.5}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("model.spilt_ratio"), std::string::npos);
  }
}

TEST(RunConfig, WrongTypeIsNamed) {
  try {
    RunConfig::from_json({{"train.epochs", "ten"}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.epochs"), std::string::npos);
  }
}

TEST(RunConfig, ValidateRejectsBadValues) {
  RunConfig c;
  c.train.model.split_ratio = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.train.height = 48;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.split = {0.5, 0.5, 0.5};
  EXPECT_THROW(c.validate(), ConfigError);
  RunConfig{}.validate();
}

TEST(RunConfig, TrainSectionExcludesDataSource) {
  const nlohmann::json j = TrainConfig{}.to_json();
  EXPECT_TRUE(j.contains("optim.lr"));
  EXPECT_TRUE(j.contains("data.height"));
  EXPECT_FALSE(j.contains("data.root"));
  EXPECT_FALSE(j.contains("data.synthetic"));
}

}  // namespace
}  // namespace eatkit

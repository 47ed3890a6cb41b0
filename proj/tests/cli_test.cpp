#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / ("eatkit_cli_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    std::ofstream(p / "tiny.json") << R"({"model.stage_dims": [8, 16, 16, 16], "model.stage_depths": [1, 1, 1, 1],
      "model.stage_heads": [1, 2, 2, 2], "model.msra_dilations": [1, 2], "model.ffn_expansion": 2.0,
      "data.height": 32, "data.width": 32, "data.synthetic_per_class": 8, "train.batch_size": 8,
      "train.epochs": 2})";
    return p;
  }();
  return dir;
}

struct Result {
  int code = -1;
  std::string out;
};

// Runs the tool with stdout captured and stderr discarded.
Result run(const std::string& args) {
  const fs::path out = workdir() / "stdout.txt";
  const std::string cmd = std::string(EATKIT_CLI) + " " + args + " > " + out.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  std::ifstream in(out);
  std::ostringstream s;
  s << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, s.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string tiny() { return "--config " + (workdir() / "tiny.json").string(); }

TEST(Cli, InspectReportsFormulaAndCensus) {
  Result r = run("inspect");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("formula     5600  census     5829"), std::string::npos) << r.out;
}

TEST(Cli, TrainTwiceGivesIdenticalLogs) {
  const fs::path a = workdir() / "a", b = workdir() / "b";
  ASSERT_EQ(run("train --synthetic --quiet --seed 3 " + tiny() + " --out " + a.string()).code, 0);
  ASSERT_EQ(run("train --synthetic --quiet --seed 3 " + tiny() + " --out " + b.string()).code, 0);
  for (const char* f : {"config.json", "log.jsonl", "report.json", "best.eatkpt", "last.eatkpt"}) {
    EXPECT_TRUE(fs::exists(a / f)) << f;
  }
  const std::string log = slurp(a / "log.jsonl");
  EXPECT_FALSE(log.empty());
  EXPECT_EQ(log, slurp(b / "log.jsonl"));
  EXPECT_EQ(nlohmann::json::parse(slurp(a / "config.json"))["train.seed"], 3);
}

TEST(Cli, EvalJsonMatchesRunReport) {
  const fs::path dir = workdir() / "e";
  ASSERT_EQ(run("train --synthetic --quiet " + tiny() + " --out " + dir.string()).code, 0);
  Result r = run("eval --json --split val --checkpoint " + (dir / "best.eatkpt").string());
  ASSERT_EQ(r.code, 0);
  const auto got = nlohmann::json::parse(r.out);
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  EXPECT_EQ(got["split"], "val");
  EXPECT_EQ(got["metrics"], report["val"]["metrics"]) << report.dump(2);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run("train --quiet --out " + (workdir() / "nodata").string()).code, 2);
  EXPECT_EQ(run("train --synthetic --quiet --set model.split_ratio=1.5 --out " + (workdir() / "p").string()).code, 2);
  EXPECT_EQ(run("train --synthetic --quiet --set no.such.key=1 --out " + (workdir() / "k").string()).code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);

  EXPECT_EQ(run("eval --checkpoint " + (workdir() / "missing.eatkpt").string()).code, 3);
  std::ofstream(workdir() / "junk.eatkpt") << "not a checkpoint";
  EXPECT_EQ(run("eval --checkpoint " + (workdir() / "junk.eatkpt").string()).code, 3);
  EXPECT_EQ(run("train --quiet --data " + (workdir() / "no_tree").string() + " --out " + (workdir() / "d").string()).code, 3);

  EXPECT_EQ(run("train --synthetic --quiet " + tiny() + " --set optim.lr=1e200 --out " + (workdir() / "n").string()).code, 4);
}

TEST(Cli, VerifyExitStatus) {
  EXPECT_EQ(run("verify --filter md_msa.reduction").code, 0);
  EXPECT_EQ(run("verify --filter no_such_check").code, 1);
  EXPECT_EQ(run("verify --filter grad.conv2d --fault-op conv2d").code, 1);
  Result j = run("verify --json --filter metrics");
  ASSERT_EQ(j.code, 0);
  EXPECT_EQ(nlohmann::json::parse(j.out)["total"], 1);
}

class CleanWorkdir : public ::testing::Environment {
 public:
  void TearDown() override { fs::remove_all(workdir()); }
};

const auto* const kClean = ::testing::AddGlobalTestEnvironment(new CleanWorkdir);

}  // namespace

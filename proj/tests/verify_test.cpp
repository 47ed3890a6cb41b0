#include <gtest/gtest.h>

#include <algorithm>

#include "eatkit/train/verify.hpp"

namespace eatkit {
namespace {

const VerifyCheck* find(const VerifyLedger& l, const std::string& name) {
  for (const VerifyCheck& c : l.checks)
    if (c.name == name) return &c;
  return nullptr;
}

TEST(Verify, DefaultConfigIsGreen) {
  const VerifyLedger l = verify(ModelConfig::mini(), {.seed = 0});
  EXPECT_EQ(l.checks.size(), verify_check_names().size());
  for (const VerifyCheck& c : l.checks) EXPECT_TRUE(c.passed) << c.name << ": " << c.value << " " << c.detail;
  EXPECT_TRUE(l.passed());
}

TEST(Verify, LedgerIsDeterministicInSeed) {
  const VerifyOptions o{.seed = 3, .filter = "grad.l"};
  const std::string a = verify(ModelConfig::mini(), o).to_json().dump();
  EXPECT_EQ(a, verify(ModelConfig::mini(), o).to_json().dump());
  const VerifyOptions other{.seed = 4, .filter = "grad.l"};
  EXPECT_NE(a, verify(ModelConfig::mini(), other).to_json().dump());
}

TEST(Verify, FilterSelectsBySubstring) {
  const VerifyLedger l = verify(ModelConfig::mini(), {.seed = 0, .filter = "gli."});
  ASSERT_EQ(l.checks.size(), 3u);
  for (const VerifyCheck& c : l.checks) EXPECT_NE(c.name.find("gli."), std::string::npos);
  EXPECT_TRUE(verify(ModelConfig::mini(), {.seed = 0, .filter = "no-such-check"}).checks.empty());
}

TEST(Verify, EveryOpHasAGradientCheck) {
  const auto names = verify_check_names();
  for (const char* op : {"conv2d", "layer_norm", "softmax", "linear", "matmul", "transpose", "reshape", "add", "sub",
                         "mul", "mul_broadcast", "scale", "gelu", "sigmoid", "weighted_sum", "concat", "slice",
                         "mean_axis", "sum", "cross_entropy", "bilinear_sample", "deform_resample"}) {
    EXPECT_NE(std::find(names.begin(), names.end(), std::string("grad.") + op), names.end()) << op;
  }
}

TEST(Verify, InjectedBackwardFaultIsCaught) {
  const VerifyLedger l = verify(ModelConfig::mini(), {.seed = 0, .filter = "grad.", .fault_op = "gelu"});
  ASSERT_NE(find(l, "grad.gelu"), nullptr);
  EXPECT_FALSE(find(l, "grad.gelu")->passed);
  EXPECT_FALSE(find(l, "grad.ffn")->passed);
  EXPECT_FALSE(find(l, "grad.composite")->passed);
  EXPECT_TRUE(find(l, "grad.matmul")->passed);
  EXPECT_FALSE(l.passed());
  EXPECT_EQ(l.to_json().at("passed"), false);
}

TEST(Verify, ParamFormulaReportsCensus) {
  const VerifyLedger l = verify(ModelConfig::mini(), {.seed = 0, .filter = "param_formula"});
  ASSERT_EQ(l.checks.size(), 1u);
  EXPECT_NE(l.checks[0].detail.find("5600"), std::string::npos);
  EXPECT_NE(l.checks[0].detail.find("census"), std::string::npos);
}

TEST(Verify, AblatedConfigIsGreen) {
  ModelConfig c = ModelConfig::mini();
  c.md_msa_enabled = false;
  const VerifyLedger l = verify(c, {.seed = 1, .filter = "gli"});
  EXPECT_TRUE(l.passed());
}

}  // namespace
}  // namespace eatkit

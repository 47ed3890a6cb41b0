#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace eatkit::cli {

enum ExitCode : int {
  kOk = 0,
  kFailed = 1,
  kConfigError = 2,
  kDataError = 3,
  kNumericError = 4,
};

struct TrainArgs {
  std::string config;
  std::string data;
  bool synthetic = false;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::string out;
  /// Extra "key=value" overrides with flat dotted keys.
  std::vector<std::string> set;
  bool quiet = false;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  bool synthetic = false;
  std::string split = "test";
  bool json = false;
};

struct VerifyArgs {
  std::string config;
  std::uint64_t seed = 0;
  std::string filter;
  std::string fault_op;
  bool json = false;
};

struct InspectArgs {
  std::string config;
  std::size_t size = 64;
  bool json = false;
};

struct BenchArgs {
  std::string checkpoint;
  std::string config;
  std::size_t batch = 8;
  std::size_t iters = 10;
  std::size_t size = 64;
  bool json = false;
};

int run_train(const TrainArgs& a, std::ostream& out);
int run_eval(const EvalArgs& a, std::ostream& out);
int run_verify(const VerifyArgs& a, std::ostream& out);
int run_inspect(const InspectArgs& a, std::ostream& out);
int run_bench(const BenchArgs& a, std::ostream& out);

}  // namespace eatkit::cli

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace eatkit {

/// Mixes a base seed with a stream name so independent components (data, init,
/// augment) draw from decorrelated sequences.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index);

/// mt19937_64 with distribution helpers that do not depend on the standard
/// library's distribution implementations, so sequences are portable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  double normal();

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace eatkit

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "eatkit/autodiff.hpp"
#include "eatkit/ops.hpp"
#include "eatkit/rng.hpp"

namespace eatkit {

/// Owns every Parameter of a model. Addresses are stable for the store's
/// lifetime (including moves), so modules keep raw pointers.
class ParameterStore {
 public:
  /// Throws std::invalid_argument if `name` is already registered.
  Parameter& add(std::string name, Tensor init);

  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  /// Registration order.
  std::vector<Parameter*> all() const;
  /// Lexicographic name order (checkpoint payload order).
  std::vector<Parameter*> sorted() const;
  /// Parameters whose names start with `prefix`.
  std::vector<Parameter*> with_prefix(std::string_view prefix) const;

  std::size_t size() const noexcept { return params_.size(); }
  std::size_t scalar_count() const;
  std::size_t scalar_count(std::string_view prefix) const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class Init {
  Zeros,
  Ones,
  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  FanInUniform,
};

/// Creates named parameters under a dotted prefix.
class ModuleBuilder {
 public:
  ModuleBuilder(ParameterStore& store, Rng& rng, std::string prefix = {})
      : store_(&store), rng_(&rng), prefix_(std::move(prefix)) {}

  ModuleBuilder child(std::string_view name) const;
  const std::string& prefix() const { return prefix_; }

  Parameter& make(std::string_view name, Shape shape, Init init, std::size_t fan_in = 0);

 private:
  ParameterStore* store_;
  Rng* rng_;
  std::string prefix_;
};

struct Linear {
  Parameter* weight = nullptr;  // out × in
  Parameter* bias = nullptr;
  /// Constant multiplier on the weight. Zero-initialized layers use
  /// 1/sqrt(fan_in), which scales down their effective Adam step.
  double gain = 1.0;

  static Linear create(const ModuleBuilder& b, std::size_t in, std::size_t out, bool zero_init = false);
  Var operator()(Tape& t, Var x) const;
};

struct Conv {
  Parameter* weight = nullptr;  // out × in/groups × k × k
  Parameter* bias = nullptr;
  ops::Conv2dOptions options;
  /// Same convention as Linear::gain.
  double gain = 1.0;

  static Conv create(const ModuleBuilder& b, std::size_t in, std::size_t out, std::size_t kernel,
                     const ops::Conv2dOptions& opt, bool zero_init = false);
  Var operator()(Tape& t, Var x) const;
};

/// Layer normalization over one axis (channels for NCHW, last axis for tokens).
struct Norm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
  int axis = 1;
  double eps = 1e-6;

  static Norm create(const ModuleBuilder& b, std::size_t channels, int axis);
  Var operator()(Tape& t, Var x) const;
};

/// Weighted Operation Mixing: softmax over learnable logits, one per branch.
struct WomMixer {
  Parameter* alphas = nullptr;

  static WomMixer create(const ModuleBuilder& b, std::size_t branches);
  std::size_t branches() const { return alphas->value.numel(); }
  Var weights(Tape& t) const;
  /// Σ softmax(α)_n · branch_n.
  Var mix(Tape& t, std::span<const Var> branches) const;
};

/// Overwrites every parameter with U(-scale, scale) draws in registration
/// order. Gradient checks use this to leave the zero-initialized identity point.
void randomize_parameters(ParameterStore& store, std::uint64_t seed, double scale = 0.5);

/// Softmax of the mixing logits.
Var wom_weights(Var alphas);
Tensor wom_weights(const Tensor& alphas);

}  // namespace eatkit

#include "eatkit/model/layers.hpp"

#include <algorithm>
#include <cmath>

namespace eatkit {

Parameter& ParameterStore::add(std::string name, Tensor init) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_.emplace(name, params_.size());
  params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(init)));
  return *params_.back();
}

Parameter* ParameterStore::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParameterStore::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : params_[it->second].get();
}

std::vector<Parameter*> ParameterStore::all() const {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParameterStore::sorted() const {
  auto out = all();
  std::sort(out.begin(), out.end(), [](const Parameter* a, const Parameter* b) { return a->name < b->name; });
  return out;
}

std::vector<Parameter*> ParameterStore::with_prefix(std::string_view prefix) const {
  std::vector<Parameter*> out;
  for (const auto& p : params_)
    if (std::string_view(p->name).starts_with(prefix)) out.push_back(p.get());
  return out;
}

std::size_t ParameterStore::scalar_count() const { return scalar_count(""); }

std::size_t ParameterStore::scalar_count(std::string_view prefix) const {
  std::size_t n = 0;
  for (const Parameter* p : with_prefix(prefix)) n += p->value.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

ModuleBuilder ModuleBuilder::child(std::string_view name) const {
  return ModuleBuilder(*store_, *rng_, prefix_.empty() ? std::string(name) : prefix_ + "." + std::string(name));
}

Parameter& ModuleBuilder::make(std::string_view name, Shape shape, Init init, std::size_t fan_in) {
  Tensor t(std::move(shape));
  switch (init) {
    case Init::Zeros:
      break;
    case Init::Ones:
      t.fill(1.0);
      break;
    case Init::FanInUniform: {
      const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
      for (double& v : t.data()) v = rng_->uniform(-bound, bound);
      break;
    }
  }
  return store_->add(prefix_.empty() ? std::string(name) : prefix_ + "." + std::string(name), std::move(t));
}

Linear Linear::create(const ModuleBuilder& b, std::size_t in, std::size_t out, bool zero_init) {
  ModuleBuilder mb = b;
  Linear l;
  l.weight = &mb.make("weight", {out, in}, zero_init ? Init::Zeros : Init::FanInUniform, in);
  l.bias = &mb.make("bias", {out}, Init::Zeros);
  if (zero_init) l.gain = 1.0 / std::sqrt(static_cast<double>(in));
  return l;
}

Var Linear::operator()(Tape& t, Var x) const {
  Var w = t.param(*weight);
  return ops::linear(x, gain == 1.0 ? w : ops::scale(w, gain), t.param(*bias));
}

Conv Conv::create(const ModuleBuilder& b, std::size_t in, std::size_t out, std::size_t kernel,
                  const ops::Conv2dOptions& opt, bool zero_init) {
  ModuleBuilder mb = b;
  Conv c;
  c.options = opt;
  const std::size_t per_group = in / opt.groups;
  c.weight = &mb.make("weight", {out, per_group, kernel, kernel}, zero_init ? Init::Zeros : Init::FanInUniform,
                      per_group * kernel * kernel);
  c.bias = &mb.make("bias", {out}, Init::Zeros);
  if (zero_init) c.gain = 1.0 / std::sqrt(static_cast<double>(per_group * kernel * kernel));
  return c;
}

Var Conv::operator()(Tape& t, Var x) const {
  Var w = t.param(*weight);
  return ops::conv2d(x, gain == 1.0 ? w : ops::scale(w, gain), t.param(*bias), options);
}

Norm Norm::create(const ModuleBuilder& b, std::size_t channels, int axis) {
  ModuleBuilder mb = b;
  Norm n;
  n.axis = axis;
  n.gamma = &mb.make("gamma", {channels}, Init::Ones);
  n.beta = &mb.make("beta", {channels}, Init::Zeros);
  return n;
}

Var Norm::operator()(Tape& t, Var x) const {
  return ops::layer_norm(x, axis, t.param(*gamma), t.param(*beta), eps);
}

WomMixer WomMixer::create(const ModuleBuilder& b, std::size_t branches) {
  if (branches == 0) throw std::invalid_argument("WomMixer needs at least one branch");
  ModuleBuilder mb = b;
  return WomMixer{&mb.make("alpha", {branches}, Init::Zeros)};
}

Var WomMixer::weights(Tape& t) const { return wom_weights(t.param(*alphas)); }

Var WomMixer::mix(Tape& t, std::span<const Var> branches_in) const {
  if (branches_in.size() != branches()) {
    throw ShapeError("WomMixer: " + std::to_string(branches_in.size()) + " branches for " +
                     std::to_string(branches()) + " weights");
  }
  return ops::weighted_sum(branches_in, weights(t));
}

void randomize_parameters(ParameterStore& store, std::uint64_t seed, double scale) {
  Rng rng(derive_seed(seed, "randomize"));
  for (Parameter* p : store.all())
    for (double& v : p->value.data()) v = rng.uniform(-scale, scale);
}

Var wom_weights(Var alphas) { return ops::softmax(alphas, 0); }

Tensor wom_weights(const Tensor& alphas) {
  Tape t(false);
  return wom_weights(t.constant(alphas)).value();
}

}  // namespace eatkit

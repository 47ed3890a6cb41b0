#include "eatkit/train/optim.hpp"

#include <cmath>

namespace eatkit {

void adam_step(std::span<Parameter* const> params, AdamState& state) {
  for (const Parameter* p : params) {
    if (p->grad.shape() != p->value.shape()) {
      throw ShapeError("adam: gradient of " + p->name + " has shape " + to_string(p->grad.shape()));
    }
    for (double g : p->grad.data()) {
      if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient in parameter " + p->name);
    }
  }
  const AdamOptions& o = state.options;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (Parameter* p : params) {
    auto [mit, m_new] = state.m.try_emplace(p->name, Tensor::zeros_like(p->value));
    auto [vit, v_new] = state.v.try_emplace(p->name, Tensor::zeros_like(p->value));
    double* m = mit->second.raw();
    double* v = vit->second.raw();
    double* w = p->value.raw();
    const double* g = p->grad.raw();
    for (std::size_t i = 0, n = p->value.numel(); i < n; ++i) {
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
      w[i] -= o.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + o.eps);
    }
  }
}

}  // namespace eatkit

#include "eatkit/train/verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "eatkit/gradcheck.hpp"
#include "eatkit/metrics.hpp"
#include "eatkit/model/blocks.hpp"
#include "eatkit/ops.hpp"
#include "eatkit/rng.hpp"

namespace eatkit {

using nlohmann::json;

json VerifyCheck::to_json() const {
  return {{"name", name}, {"passed", passed}, {"value", value}, {"tolerance", tolerance}, {"detail", detail}};
}

bool VerifyLedger::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const VerifyCheck& c) { return c.passed; });
}

json VerifyLedger::to_json() const {
  json list = json::array();
  std::size_t failed = 0;
  for (const VerifyCheck& c : checks) {
    list.push_back(c.to_json());
    failed += !c.passed;
  }
  return {{"seed", seed}, {"passed", passed()}, {"total", checks.size()}, {"failed", failed}, {"checks", list}};
}

namespace {

constexpr double kOpTol = 1e-5;
constexpr double kCompositeTol = 1e-4;

struct Ctx {
  const ModelConfig& cfg;
  const VerifyOptions& opt;
};

Tensor draw(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Derived constant number `k` of one trial.
std::uint64_t sub(std::uint64_t trial, std::uint64_t k) { return derive_seed(trial, "const", k); }

Var project(Var out, std::uint64_t trial) {
  return ops::sum(ops::mul(out, out.tape().constant(draw(out.shape(), derive_seed(trial, "project")))));
}

using OpFn = std::function<Var(Tape&, Var, std::uint64_t)>;

struct Variant {
  std::string label;
  OpFn fn;
  Shape shape;
  double lo = -1.0;
  double hi = 1.0;
};

double run_variant(const Ctx& c, const std::string& name, const Variant& v, double h, std::string& worst) {
  double err = 0.0;
  for (std::size_t i = 0; i < c.opt.trials; ++i) {
    const std::uint64_t trial = derive_seed(derive_seed(c.opt.seed, name + "/" + v.label), "trial", i);
    GradCheckOptions go{.h = h, .coordinates = std::nullopt, .fault_op = c.opt.fault_op,
                        .fault_factor = c.opt.fault_factor};
    const Tensor x = draw(v.shape, trial, v.lo, v.hi);
    const double e =
        grad_check([&](Tape& t, Var in) { return project(v.fn(t, in, trial), trial); }, x, go).max_rel_error;
    if (!(e <= err)) {
      err = e;
      worst = v.label + " trial " + std::to_string(i);
    }
  }
  return err;
}

VerifyCheck grad_variants(const Ctx& c, const std::string& name, const std::vector<Variant>& variants,
                          double h = 1e-5, double tol = kOpTol) {
  double err = 0.0;
  std::string worst;
  for (const Variant& v : variants) {
    std::string w;
    const double e = run_variant(c, name, v, h, w);
    if (!(e <= err)) {
      err = e;
      worst = w;
    }
  }
  std::ostringstream d;
  d << variants.size() << " variant(s) x " << c.opt.trials << " inputs, h=" << h << ", worst: " << worst;
  return {name, err < tol, err, tol, d.str()};
}

Tensor off_grid(const Shape& shape, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  Tensor t(shape);
  for (double& v : t.data()) v = std::floor(rng.uniform(lo, hi)) + rng.uniform(0.1, 0.9);
  return t;
}

// --- per-op checks ----------------------------------------------------------

std::vector<std::pair<std::string, std::vector<Variant>>> op_checks() {
  using O = ops::Conv2dOptions;
  const O dil{.stride = 1, .padding = 2, .dilation = 2, .groups = 4};
  const O str{.stride = 2, .padding = 1};
  std::vector<std::pair<std::string, std::vector<Variant>>> v;
  v.push_back({"conv2d",
               {{"input/dilated", [=](Tape& t, Var x, std::uint64_t s) {
                   return ops::conv2d(x, t.constant(draw({4, 1, 3, 3}, sub(s, 1))), t.constant(draw({4}, sub(s, 2))), dil);
                 }, {1, 4, 6, 6}},
                {"input/strided", [=](Tape& t, Var x, std::uint64_t s) {
                   return ops::conv2d(x, t.constant(draw({4, 3, 3, 3}, sub(s, 1))), t.constant(draw({4}, sub(s, 2))), str);
                 }, {2, 3, 6, 6}},
                {"weight", [=](Tape& t, Var w, std::uint64_t s) {
                   return ops::conv2d(t.constant(draw({2, 3, 6, 6}, sub(s, 1))), w, t.constant(draw({4}, sub(s, 2))), str);
                 }, {4, 3, 3, 3}},
                {"bias", [=](Tape& t, Var b, std::uint64_t s) {
                   return ops::conv2d(t.constant(draw({1, 4, 6, 6}, sub(s, 1))), t.constant(draw({4, 1, 3, 3}, sub(s, 2))), b, dil);
                 }, {4}}}});
  v.push_back({"layer_norm",
               {{"input/channels", [](Tape& t, Var x, std::uint64_t s) {
                   return ops::layer_norm(x, 1, t.constant(draw({4}, sub(s, 1))), t.constant(draw({4}, sub(s, 2))));
                 }, {2, 4, 3, 3}, -2, 2},
                {"input/last", [](Tape& t, Var x, std::uint64_t s) {
                   return ops::layer_norm(x, -1, t.constant(draw({6}, sub(s, 1))), t.constant(draw({6}, sub(s, 2))));
                 }, {2, 5, 6}, -2, 2},
                {"gamma", [](Tape& t, Var g, std::uint64_t s) {
                   return ops::layer_norm(t.constant(draw({2, 5, 6}, sub(s, 1))), -1, g, t.constant(draw({6}, sub(s, 2))));
                 }, {6}},
                {"beta", [](Tape& t, Var b, std::uint64_t s) {
                   return ops::layer_norm(t.constant(draw({2, 5, 6}, sub(s, 1))), -1, t.constant(draw({6}, sub(s, 2))), b);
                 }, {6}}}});
  v.push_back({"softmax",
               {{"last", [](Tape&, Var x, std::uint64_t) { return ops::softmax(x, -1); }, {3, 4, 5}, -3, 3},
                {"middle", [](Tape&, Var x, std::uint64_t) { return ops::softmax(x, 1); }, {3, 4, 5}, -3, 3}}});
  v.push_back({"linear",
               {{"input", [](Tape& t, Var x, std::uint64_t s) {
                   return ops::linear(x, t.constant(draw({5, 4}, sub(s, 1))), t.constant(draw({5}, sub(s, 2))));
                 }, {2, 3, 4}},
                {"weight", [](Tape& t, Var w, std::uint64_t s) {
                   return ops::linear(t.constant(draw({2, 3, 4}, sub(s, 1))), w, t.constant(draw({5}, sub(s, 2))));
                 }, {5, 4}},
                {"bias", [](Tape& t, Var b, std::uint64_t s) {
                   return ops::linear(t.constant(draw({2, 3, 4}, sub(s, 1))), t.constant(draw({5, 4}, sub(s, 2))), b);
                 }, {5}}}});
  v.push_back({"matmul",
               {{"a", [](Tape& t, Var a, std::uint64_t s) { return ops::matmul(a, t.constant(draw({2, 4, 3}, sub(s, 1)))); },
                 {2, 5, 4}},
                {"b", [](Tape& t, Var b, std::uint64_t s) { return ops::matmul(t.constant(draw({2, 5, 4}, sub(s, 1))), b); },
                 {2, 4, 3}}}});
  v.push_back({"transpose", {{"1,3", [](Tape&, Var x, std::uint64_t) { return ops::transpose(x, 1, 3); }, {2, 3, 4, 2}}}});
  v.push_back({"reshape", {{"flat", [](Tape&, Var x, std::uint64_t) { return ops::reshape(x, {6, 4}); }, {2, 3, 4}}}});
  v.push_back({"add", {{"x+c", [](Tape& t, Var x, std::uint64_t s) { return ops::add(x, t.constant(draw({3, 4}, sub(s, 1)))); },
                        {3, 4}}}});
  v.push_back({"sub", {{"c-x", [](Tape& t, Var x, std::uint64_t s) { return ops::sub(t.constant(draw({3, 4}, sub(s, 1))), x); },
                        {3, 4}}}});
  v.push_back({"mul",
               {{"x*c", [](Tape& t, Var x, std::uint64_t s) { return ops::mul(x, t.constant(draw({3, 4}, sub(s, 1)))); },
                 {3, 4}},
                {"x*x", [](Tape&, Var x, std::uint64_t) { return ops::mul(x, x); }, {3, 4}}}});
  v.push_back({"mul_broadcast",
               {{"a", [](Tape& t, Var x, std::uint64_t s) {
                   return ops::mul_broadcast(x, t.constant(draw({2, 1, 3, 3}, sub(s, 1))));
                 }, {2, 4, 3, 3}},
                {"b", [](Tape& t, Var x, std::uint64_t s) {
                   return ops::mul_broadcast(t.constant(draw({2, 4, 3, 3}, sub(s, 1))), x);
                 }, {2, 1, 3, 3}}}});
  v.push_back({"scale", {{"-2.5", [](Tape&, Var x, std::uint64_t) { return ops::scale(x, -2.5); }, {5}}}});
  v.push_back({"gelu", {{"x", [](Tape&, Var x, std::uint64_t) { return ops::gelu(x); }, {3, 4}, -3, 3}}});
  v.push_back({"sigmoid", {{"x", [](Tape&, Var x, std::uint64_t) { return ops::sigmoid(x); }, {3, 4}, -4, 4}}});
  v.push_back({"weighted_sum",
               {{"terms", [](Tape& t, Var x, std::uint64_t s) {
                   const Var terms[] = {x, ops::mul(x, x), t.constant(draw({2, 3}, sub(s, 1)))};
                   return ops::weighted_sum(terms, t.constant(draw({3}, sub(s, 2))));
                 }, {2, 3}},
                {"weights", [](Tape& t, Var w, std::uint64_t s) {
                   const Var terms[] = {t.constant(draw({2, 3}, sub(s, 1))), t.constant(draw({2, 3}, sub(s, 2)))};
                   return ops::weighted_sum(terms, w);
                 }, {2}}}});
  v.push_back({"concat", {{"axis1", [](Tape& t, Var x, std::uint64_t s) {
                             const Var parts[] = {x, t.constant(draw({2, 2, 3}, sub(s, 1))), x};
                             return ops::concat(parts, 1);
                           }, {2, 3, 3}}}});
  v.push_back({"slice", {{"axis1", [](Tape&, Var x, std::uint64_t) { return ops::slice(x, 1, 1, 3); }, {2, 4, 3}}}});
  v.push_back({"mean_axis",
               {{"axis1", [](Tape&, Var x, std::uint64_t) { return ops::mean_axis(x, 1); }, {2, 5, 3}},
                {"spatial", [](Tape&, Var x, std::uint64_t) { return ops::mean_pool_spatial(x); }, {2, 3, 4, 4}}}});
  v.push_back({"sum", {{"all", [](Tape&, Var x, std::uint64_t) { return ops::sum(x); }, {2, 3}}}});
  v.push_back({"cross_entropy", {{"logits", [](Tape&, Var z, std::uint64_t) {
                                    static const int labels[] = {0, 3, 1};
                                    return ops::cross_entropy(z, labels);
                                  }, {3, 4}, -3, 3}}});
  v.push_back({"bilinear_sample",
               {{"map", [](Tape& t, Var m, std::uint64_t s) {
                   return ops::bilinear_sample(m, t.constant(off_grid({2}, sub(s, 1), -1.0, 4.0)));
                 }, {3, 4, 5}},
                {"coords", [](Tape& t, Var yx, std::uint64_t s) {
                   // Shift the drawn coordinates off the integer grid where the map is not smooth.
                   Var base = t.constant(off_grid({2}, sub(s, 2), -1.0, 4.0));
                   return ops::bilinear_sample(t.constant(draw({3, 4, 5}, sub(s, 1))),
                                               ops::add(base, ops::scale(yx, 0.05)));
                 }, {2}}}});
  v.push_back({"deform_resample",
               {{"map", [](Tape& t, Var m, std::uint64_t s) {
                   return ops::deform_resample(m, t.constant(off_grid({2, 2, 4, 4}, sub(s, 1), -2.0, 2.0)));
                 }, {2, 3, 4, 4}},
                {"offsets", [](Tape& t, Var o, std::uint64_t s) {
                   Var base = t.constant(off_grid({2, 2, 4, 4}, sub(s, 2), -2.0, 2.0));
                   return ops::deform_resample(t.constant(draw({2, 3, 4, 4}, sub(s, 1))),
                                               ops::add(base, ops::scale(o, 0.05)));
                 }, {2, 2, 4, 4}}}});
  return v;
}

// --- module checks ----------------------------------------------------------

struct Module {
  ParameterStore store;
  Rng rng;
  explicit Module(std::uint64_t seed) : rng(derive_seed(seed, "module")) {}
  ModuleBuilder builder() { return ModuleBuilder(store, rng, "m"); }
};

ModelConfig small_stage(const ModelConfig& cfg) {
  ModelConfig s = cfg;
  s.stage_dims = {8, 16, 32, 64};
  s.stage_heads = {2, 2, 2, 2};
  return s;
}

std::vector<std::pair<std::string, std::function<VerifyCheck(const Ctx&)>>> module_checks() {
  std::vector<std::pair<std::string, std::function<VerifyCheck(const Ctx&)>>> v;

  auto module_grad = [](const std::string& name, auto build, Shape shape, double h, double tol) {
    return [=](const Ctx& c) {
      auto m = std::make_shared<Module>(derive_seed(c.opt.seed, name));
      auto fn = build(c, *m);
      randomize_parameters(m->store, derive_seed(c.opt.seed, name + "/params"), 0.4);
      return grad_variants(c, name, {{"input", [fn, m](Tape& t, Var x, std::uint64_t) { return fn(t, x); }, shape}}, h, tol);
    };
  };

  v.push_back({"grad.msra", module_grad("grad.msra", [](const Ctx& c, Module& m) {
    auto blk = std::make_shared<Msra>(m.builder(), MsraSpec{.in_channels = 4, .out_channels = 4, .stride = 1,
                                                             .kernel = c.cfg.local_kernel,
                                                             .dilations = c.cfg.msra_dilations});
    return [blk](Tape& t, Var x) { return blk->forward(t, x); };
  }, {1, 4, 6, 6}, 1e-5, kOpTol)});
  v.push_back({"grad.msa", module_grad("grad.msa", [](const Ctx&, Module& m) {
    auto blk = std::make_shared<Msa>(m.builder(), 8, 2);
    return [blk](Tape& t, Var x) { return blk->forward(t, x); };
  }, {2, 5, 8}, 1e-5, kOpTol)});
  v.push_back({"grad.md_msa", module_grad("grad.md_msa", [](const Ctx&, Module& m) {
    auto blk = std::make_shared<MdMsa>(m.builder(), 8, 2, false);
    return [blk](Tape& t, Var x) { return blk->forward(t, x); };
  }, {1, 8, 4, 4}, 1e-5, kOpTol)});
  v.push_back({"grad.gli", module_grad("grad.gli", [](const Ctx& c, Module& m) {
    auto blk = std::make_shared<Gli>(m.builder(), 8, global_channel_count(8, c.cfg.split_ratio, 2), 2,
                                     c.cfg.local_kernel, c.cfg.md_msa_enabled, false);
    return [blk](Tape& t, Var x) { return blk->forward(t, x); };
  }, {1, 8, 4, 4}, 1e-5, kOpTol)});
  v.push_back({"grad.ffn", module_grad("grad.ffn", [](const Ctx& c, Module& m) {
    auto blk = std::make_shared<Ffn>(m.builder(), 8, c.cfg.ffn_expansion);
    return [blk](Tape& t, Var x) { return blk->forward(t, x); };
  }, {2, 4, 8}, 1e-5, kOpTol)});
  v.push_back({"grad.trh", module_grad("grad.trh", [](const Ctx&, Module& m) {
    auto blk = std::make_shared<TaskHead>(m.builder(), 8, 3);
    return [blk](Tape& t, Var x) { return blk->forward(t, x); };
  }, {2, 8, 2, 2}, 1e-5, kOpTol)});
  v.push_back({"grad.eat_block", module_grad("grad.eat_block", [](const Ctx& c, Module& m) {
    auto blk = std::make_shared<EatBlock>(m.builder(), small_stage(c.cfg), 0);
    return [blk](Tape& t, Var x) { return blk->forward(t, x); };
  }, {1, 8, 8, 8}, 1e-4, kCompositeTol)});

  v.push_back({"grad.composite", [](const Ctx& c) {
    const std::size_t side = std::max<std::size_t>(32, c.cfg.total_stride());
    const std::size_t per_trial = 12;
    double err = 0.0;
    std::string worst;
    for (std::size_t i = 0; i < c.opt.trials; ++i) {
      const std::uint64_t trial = derive_seed(derive_seed(c.opt.seed, "grad.composite"), "trial", i);
      EatFormer model(c.cfg, trial);
      randomize_parameters(model.parameters(), derive_seed(trial, "params"), 0.2);
      const Tensor x = draw({1, c.cfg.in_channels, side, side}, derive_seed(trial, "x"));
      Rng rng(derive_seed(trial, "coords"));
      const int label[] = {static_cast<int>(rng.below(c.cfg.num_classes))};
      std::vector<std::size_t> coords;
      for (std::size_t k = 0; k < per_trial; ++k) coords.push_back(rng.below(x.numel()));
      GradCheckOptions go{.h = 1e-4, .coordinates = coords, .fault_op = c.opt.fault_op,
                          .fault_factor = c.opt.fault_factor};
      auto loss = [&](Tape& t, Var v) { return ops::cross_entropy(model.forward(t, v), label); };
      const double ein = grad_check(loss, x, go).max_rel_error;

      std::vector<ParamCoordinate> pc;
      const auto params = model.parameters().all();
      for (std::size_t k = 0; k < per_trial; ++k) {
        Parameter* p = params[rng.below(params.size())];
        pc.push_back({p, rng.below(p->value.numel())});
      }
      const double ep = grad_check_params(
          [&](Tape& t) { return ops::cross_entropy(model.forward(t, t.constant(x)), label); }, pc, 1e-4,
          c.opt.fault_op, c.opt.fault_factor).max_rel_error;
      for (auto [e, what] : {std::pair{ein, "input"}, std::pair{ep, "params"}}) {
        if (!(e <= err)) {
          err = e;
          worst = std::string(what) + " trial " + std::to_string(i);
        }
      }
    }
    std::ostringstream d;
    d << "backbone+head+cross-entropy on 1x" << c.cfg.in_channels << "x" << side << "x" << side << ", "
      << c.opt.trials << " trials x " << 2 * per_trial << " coords, h=1e-4, worst: " << worst;
    return VerifyCheck{"grad.composite", err < kCompositeTol, err, kCompositeTol, d.str()};
  }});

  v.push_back({"md_msa.reduction", [](const Ctx& c) {
    Module m(derive_seed(c.opt.seed, "md_msa.reduction"));
    MdMsa md(m.builder(), 8, 2, true);
    randomize_parameters(m.store, derive_seed(c.opt.seed, "md_msa.reduction/params"));
    md.offset_head().weight->value.fill(0.0);
    md.offset_head().bias->value.fill(0.0);
    double worst = 0.0;
    for (std::uint64_t i = 0; i < 20; ++i) {
      const Tensor x = draw({1, 8, 4, 5}, derive_seed(c.opt.seed, "md_msa.reduction/x", i));
      Tape t(false);
      Var xv = t.constant(x);
      const Tensor a = md.forward(t, xv).value();
      const Tensor b = md.attention().forward(t, ops::to_tokens(xv)).value();
      for (std::size_t k = 0; k < a.numel(); ++k) worst = std::max(worst, std::fabs(a[k] - b[k]));
    }
    return VerifyCheck{"md_msa.reduction", worst <= 1e-12, worst, 1e-12,
                       "zero offset head with modulation bypass vs plain attention, 20 inputs"};
  }});

  auto gli_degenerate = [](bool global) {
    const std::string name = global ? "gli.p1_global_only" : "gli.p0_local_only";
    return std::pair{name, std::function<VerifyCheck(const Ctx&)>([=](const Ctx& c) {
      Module m(derive_seed(c.opt.seed, name));
      Gli g(m.builder(), 8, global ? 8 : 0, 2, c.cfg.local_kernel, c.cfg.md_msa_enabled, false);
      randomize_parameters(m.store, derive_seed(c.opt.seed, name + "/params"));
      const Tensor x = draw({2, 8, 4, 4}, derive_seed(c.opt.seed, name + "/x"));
      Tape t(false);
      Var xv = t.constant(x);
      const Tensor got = g.forward(t, xv).value();
      Var h = g.normalize(t, xv);
      const Tensor want = ops::add(xv, global ? g.global_path(t, h) : g.local_path(t, h)).value();
      double worst = 0.0;
      for (std::size_t k = 0; k < got.numel(); ++k) worst = std::max(worst, std::fabs(got[k] - want[k]));
      return VerifyCheck{name, worst == 0.0 && g.mixer().branches() == 1, worst, 0.0,
                         global ? "p=1 equals x + global path" : "p=0 equals x + local path"};
    })};
  };
  v.push_back(gli_degenerate(true));
  v.push_back(gli_degenerate(false));

  v.push_back({"wom.normalized", [](const Ctx& c) {
    Rng rng(derive_seed(c.opt.seed, "wom"));
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      const Tensor w = wom_weights(draw({1 + rng.below(6)}, derive_seed(c.opt.seed, "wom/x", i), -10.0, 10.0));
      worst = std::max(worst, std::fabs(w.sum() - 1.0));
    }
    const Tensor third = wom_weights(Tensor::vector({0.0, 0.0, 0.0}));
    const Tensor two = wom_weights(Tensor::vector({std::log(2.0), 0.0}));
    worst = std::max({worst, std::fabs(third[0] - 1.0 / 3.0), std::fabs(two[0] - 2.0 / 3.0),
                      std::fabs(wom_weights(Tensor::vector({4.0}))[0] - 1.0)});
    return VerifyCheck{"wom.normalized", worst <= 1e-12, worst, 1e-12,
                       "50 random logit vectors sum to 1; (0,0,0), (ln 2, 0) and singleton examples"};
  }});

  v.push_back({"gli.param_formula", [](const Ctx& c) {
    Rng rng(derive_seed(c.opt.seed, "gli.param_formula"));
    std::int64_t worst = std::abs(gli_param_count(64, 32, 3) - 5600);
    for (int i = 0; i < 50; ++i) {
      const auto ch = 1 + static_cast<std::int64_t>(rng.below(512));
      const auto cg = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(ch) + 1));
      const auto k = 1 + 2 * static_cast<std::int64_t>(rng.below(4));
      const std::int64_t hand = 5 * cg * cg + 2 * cg - 2 * ch * cg - k * k * cg + k * k * ch + 2 * ch + ch * ch;
      worst = std::max(worst, std::abs(gli_param_count(ch, cg, k) - hand));
    }
    Module m(0);
    Gli g(m.builder(), 64, 32, 2, 3, c.cfg.md_msa_enabled, false);
    std::ostringstream d;
    d << "formula(64,32,3)=" << gli_param_count(64, 32, 3) << " vs census of the implemented module "
      << m.store.scalar_count() << "; 50 random triples";
    return VerifyCheck{"gli.param_formula", worst == 0, static_cast<double>(worst), 0.0, d.str()};
  }});

  v.push_back({"metrics.oracles", [](const Ctx&) {
    ConfusionMatrix cm(2);
    cm.count(1, 1) = 2;
    cm.count(0, 1) = 1;
    cm.count(1, 0) = 1;
    cm.count(0, 0) = 6;
    const PrfResult prf = per_class_prf(cm);
    double worst = std::fabs(accuracy(cm) - 0.8);
    for (double x : {prf.per_class[1].precision, prf.per_class[1].recall, prf.per_class[1].f1})
      worst = std::max(worst, std::fabs(x - 2.0 / 3.0));
    worst = std::max(worst, std::fabs(mcc(cm) - 11.0 / 21.0));

    ConfusionMatrix diag(3);
    for (std::size_t k = 0; k < 3; ++k) diag.count(k, k) = 4 + k;
    const MetricsReport r = report(diag);
    for (double x : {r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1, r.mcc})
      worst = std::max(worst, std::fabs(x - 1.0));

    ConfusionMatrix one(3);
    for (std::size_t k = 0; k < 3; ++k) one.count(k, 0) = 5;
    worst = std::max(worst, std::fabs(mcc(one)));
    return VerifyCheck{"metrics.oracles", worst <= 1e-12 && mcc_degenerate(one), worst, 1e-12,
                       "binary fixture TP=2 FP=1 FN=1 TN=6, perfect diagonal, single predicted class"};
  }});

  v.push_back({"shapes.pyramid", [](const Ctx& c) {
    EatFormer model(c.cfg, c.opt.seed);
    std::size_t bad = 0;
    std::ostringstream d;
    for (std::size_t side : {std::size_t{64}, std::size_t{224}}) {
      if (side % c.cfg.total_stride() != 0) continue;
      Tape t(false);
      BackboneOutput out = model.backbone().forward(t, t.constant(Tensor({1, c.cfg.in_channels, side, side})));
      d << side << ":";
      std::size_t s = side / c.cfg.stem_stride;
      for (std::size_t i = 0; i < 4; ++i, s /= 2) {
        const Shape want{1, c.cfg.stage_dims[i], s, s};
        bad += out.stages[i].shape() != want;
        d << " " << to_string(out.stages[i].shape());
      }
      d << "; ";
    }
    return VerifyCheck{"shapes.pyramid", bad == 0, static_cast<double>(bad), 0.0, d.str()};
  }});
  return v;
}

using Runner = std::function<VerifyCheck(const Ctx&)>;

std::vector<std::pair<std::string, Runner>> all_checks() {
  std::vector<std::pair<std::string, Runner>> all;
  for (auto& [op, variants] : op_checks()) {
    const std::string name = "grad." + op;
    all.emplace_back(name, [name, variants](const Ctx& c) { return grad_variants(c, name, variants); });
  }
  for (auto& m : module_checks()) all.push_back(std::move(m));
  return all;
}

}  // namespace

std::vector<std::string> verify_check_names() {
  std::vector<std::string> names;
  for (const auto& [name, run] : all_checks()) names.push_back(name);
  return names;
}

VerifyLedger verify(const ModelConfig& config, const VerifyOptions& options) {
  config.validate();
  if (options.trials == 0) throw std::invalid_argument("verify needs at least one trial");
  VerifyLedger ledger;
  ledger.seed = options.seed;
  const Ctx ctx{config, options};
  for (const auto& [name, run] : all_checks()) {
    if (!options.filter.empty() && name.find(options.filter) == std::string::npos) continue;
    ledger.checks.push_back(run(ctx));
  }
  return ledger;
}

}  // namespace eatkit

#include "eatkit/model/blocks.hpp"

#include <cmath>

namespace eatkit {
namespace {

// Multiplies x by the i-th entry of a weight vector.
Var scale_by_entry(Var x, Var weights, std::size_t i) {
  const Var term[] = {x};
  return ops::weighted_sum(term, ops::slice(weights, 0, i, i + 1));
}

Var split_heads(Var x, std::size_t heads) {
  const Shape& s = x.shape();  // N×L×C
  return ops::transpose(ops::reshape(x, {s[0], s[1], heads, s[2] / heads}), 1, 2);
}

Var merge_heads(Var x) {
  const Shape& s = x.shape();  // N×h×L×d
  return ops::reshape(ops::transpose(x, 1, 2), {s[0], s[2], s[1] * s[3]});
}

}  // namespace

// ---------------------------------------------------------------------------
// MSRA

Msra::Msra(const ModuleBuilder& b, const MsraSpec& spec) : spec_(spec) {
  if (spec.stride != 1 && spec.stride != 2 && spec.stride != 4) {
    throw ConfigError(b.prefix() + ": MSRA stride must be 1, 2 or 4, got " + std::to_string(spec.stride));
  }
  if (spec.stride == 1 && spec.in_channels != spec.out_channels) {
    throw ConfigError(b.prefix() + ": MSRA at stride 1 needs equal in/out channels for the residual (" +
                      std::to_string(spec.in_channels) + " vs " + std::to_string(spec.out_channels) + ")");
  }
  if (spec.dilations.empty()) throw ConfigError(b.prefix() + ": MSRA needs at least one branch");
  if (spec.kernel % 2 == 0) throw ConfigError(b.prefix() + ": MSRA kernel must be odd");
  residual_ = spec.stride == 1;
  if (spec.normalize) norm_ = Norm::create(b.child("norm"), spec.in_channels, 1);
  for (std::size_t n = 0; n < spec.dilations.size(); ++n) {
    const std::size_t d = spec.dilations[n];
    const ops::Conv2dOptions opt{
        .stride = spec.stride, .padding = d * (spec.kernel - 1) / 2, .dilation = d, .groups = spec.in_channels};
    branches_.push_back(
        Conv::create(b.child("branch" + std::to_string(n)), spec.in_channels, spec.in_channels, spec.kernel, opt));
  }
  wom_ = WomMixer::create(b.child("wom"), branches_.size());
  proj_ = Conv::create(b.child("proj"), spec.in_channels, spec.out_channels, 1, {}, residual_);
}

Var Msra::forward(Tape& t, Var x) const {
  if (x.dim(1) != spec_.in_channels) {
    throw ShapeError("msra: channel axis (1) is " + std::to_string(x.dim(1)) + ", expected " +
                     std::to_string(spec_.in_channels));
  }
  const Var h = norm_ ? (*norm_)(t, x) : x;
  std::vector<Var> outs;
  outs.reserve(branches_.size());
  for (const Conv& c : branches_) outs.push_back(c(t, h));
  Var y = proj_(t, wom_.mix(t, outs));
  return residual_ ? ops::add(x, y) : y;
}

Var msra_forward(Tape& t, Var x, const Msra& m) { return m.forward(t, x); }

// ---------------------------------------------------------------------------
// MSA

Msa::Msa(const ModuleBuilder& b, std::size_t channels, std::size_t heads, bool zero_out)
    : channels_(channels), heads_(heads) {
  if (heads == 0 || channels % heads != 0) {
    throw ConfigError(b.prefix() + ": " + std::to_string(channels) + " channels not divisible by " +
                      std::to_string(heads) + " heads");
  }
  q_ = Linear::create(b.child("q"), channels, channels);
  k_ = Linear::create(b.child("k"), channels, channels);
  v_ = Linear::create(b.child("v"), channels, channels);
  o_ = Linear::create(b.child("out"), channels, channels, zero_out);
}

Var Msa::forward(Tape& t, Var tokens) const { return attend(t, tokens, tokens); }

Var Msa::attend(Tape& t, Var query_tokens, Var kv_tokens) const {
  return attend_projected(t, q_(t, query_tokens), kv_tokens);
}

Var Msa::attend_projected(Tape& t, Var q, Var kv_tokens) const {
  if (q.value().rank() != 3 || q.dim(2) != channels_) {
    throw ShapeError("msa: tokens must be N×L×" + std::to_string(channels_) + ", got " + to_string(q.shape()));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(channels_ / heads_));
  Var qh = split_heads(q, heads_);
  Var kh = split_heads(k_(t, kv_tokens), heads_);
  Var vh = split_heads(v_(t, kv_tokens), heads_);
  Var scores = ops::scale(ops::matmul(qh, ops::transpose(kh, -1, -2)), scale);
  Var attn = ops::softmax(scores, -1);
  return o_(t, merge_heads(ops::matmul(attn, vh)));
}

Var msa_forward(Tape& t, Var tokens, const Msa& m) { return m.forward(t, tokens); }

// ---------------------------------------------------------------------------
// MD-MSA

MdMsa::MdMsa(const ModuleBuilder& b, std::size_t channels, std::size_t heads, bool modulation_bypass)
    : msa_(b, channels, heads), bypass_(modulation_bypass) {
  md_ = Conv::create(b.child("md"), channels, 3, 1, {}, /*zero_init=*/true);
}

Var MdMsa::forward(Tape& t, Var x, MdMsaTrace* trace) const {
  if (x.value().rank() != 4) throw ShapeError("md_msa: input must be N×C×H×W, got " + to_string(x.shape()));
  const std::size_t h = x.dim(2), w = x.dim(3);
  Var tokens = ops::to_tokens(x);
  Var q = msa_.q()(t, tokens);
  Var raw = md_(t, ops::from_tokens(q, h, w));
  Var offsets = ops::slice(raw, 1, 0, 2);
  Var resampled = ops::deform_resample(x, offsets);
  Var modulation;
  if (!bypass_) {
    modulation = ops::sigmoid(ops::slice(raw, 1, 2, 3));
    resampled = ops::mul_broadcast(resampled, modulation);
  }
  if (trace) *trace = MdMsaTrace{offsets, modulation, resampled};
  return msa_.attend_projected(t, q, ops::to_tokens(resampled));
}

Var md_msa_forward(Tape& t, Var x, const MdMsa& m) { return m.forward(t, x); }

// ---------------------------------------------------------------------------
// GLI

Gli::Gli(const ModuleBuilder& b, std::size_t channels, std::size_t global_channels, std::size_t heads,
         std::size_t kernel, bool deformable, bool modulation_bypass)
    : channels_(channels), global_(global_channels), deformable_(deformable) {
  if (global_channels > channels) throw ConfigError(b.prefix() + ": global channels exceed total channels");
  if (kernel % 2 == 0) throw ConfigError(b.prefix() + ": local kernel must be odd");
  norm_ = Norm::create(b.child("norm"), channels, 1);
  std::size_t paths = 0;
  if (local_channels() > 0) {
    const std::size_t cl = local_channels();
    local_dw_ = Conv::create(b.child("local.dw"), cl, cl, kernel, {.padding = kernel / 2, .groups = cl});
    local_pw_ = Conv::create(b.child("local.pw"), cl, cl, 1, {}, /*zero_init=*/true);
    ++paths;
  }
  if (global_ > 0) {
    if (deformable_) {
      md_msa_ = MdMsa(b.child("global"), global_, heads, modulation_bypass);
    } else {
      msa_ = Msa(b.child("global"), global_, heads);
    }
    ++paths;
  }
  wom_ = WomMixer::create(b.child("wom"), paths);
}

Var Gli::global_path(Tape& t, Var x_global) const {
  const std::size_t h = x_global.dim(2), w = x_global.dim(3);
  Var tokens = deformable_ ? md_msa_.forward(t, x_global) : msa_.forward(t, ops::to_tokens(x_global));
  return ops::from_tokens(tokens, h, w);
}

Var Gli::local_path(Tape& t, Var x_local) const { return local_pw_(t, local_dw_(t, x_local)); }

Var Gli::forward(Tape& t, Var x) const {
  if (x.dim(1) != channels_) {
    throw ShapeError("gli: channel axis (1) is " + std::to_string(x.dim(1)) + ", expected " +
                     std::to_string(channels_));
  }
  Var h = norm_(t, x);
  Var weights = wom_.weights(t);
  Var mixed;
  if (global_ == 0) {
    mixed = scale_by_entry(local_path(t, h), weights, 0);
  } else if (local_channels() == 0) {
    mixed = scale_by_entry(global_path(t, h), weights, 0);
  } else {
    const std::size_t sizes[] = {global_, local_channels()};
    auto parts = ops::split_channels(h, sizes);
    // mixing logits are ordered (alpha_l, alpha_g)
    const Var paths[] = {scale_by_entry(global_path(t, parts[0]), weights, 1),
                         scale_by_entry(local_path(t, parts[1]), weights, 0)};
    mixed = ops::concat_channels(paths);
  }
  return ops::add(x, mixed);
}

Var gli_forward(Tape& t, Var x, const Gli& g) { return g.forward(t, x); }

std::int64_t gli_param_count(std::int64_t c, std::int64_t cg, std::int64_t k) {
  return 5 * cg * cg + (2 - 2 * c - k * k) * cg + (k * k + 2 + c) * c;
}

// ---------------------------------------------------------------------------
// FFN

Ffn::Ffn(const ModuleBuilder& b, std::size_t channels, double expansion) {
  if (!(expansion > 0.0)) throw ConfigError(b.prefix() + ": FFN expansion must be > 0");
  const auto hidden = static_cast<std::size_t>(std::llround(expansion * static_cast<double>(channels)));
  norm_ = Norm::create(b.child("norm"), channels, -1);
  fc1_ = Linear::create(b.child("fc1"), channels, hidden);
  fc2_ = Linear::create(b.child("fc2"), hidden, channels, /*zero_init=*/true);
}

Var Ffn::forward(Tape& t, Var tokens) const {
  return ops::add(tokens, fc2_(t, ops::gelu(fc1_(t, norm_(t, tokens)))));
}

Var ffn_forward(Tape& t, Var tokens, const Ffn& f) { return f.forward(t, tokens); }

// ---------------------------------------------------------------------------
// EAT block and backbone

EatBlock::EatBlock(const ModuleBuilder& b, const ModelConfig& cfg, std::size_t stage) {
  const std::size_t c = cfg.stage_dims[stage];
  msra_ = Msra(b.child("msra"), MsraSpec{.in_channels = c,
                                         .out_channels = c,
                                         .stride = 1,
                                         .kernel = cfg.local_kernel,
                                         .dilations = cfg.msra_dilations,
                                         .normalize = true});
  gli_ = Gli(b.child("gli"), c, cfg.global_channels(stage), cfg.stage_heads[stage], cfg.local_kernel,
             cfg.md_msa_enabled, cfg.modulation_bypass);
  ffn_ = Ffn(b.child("ffn"), c, cfg.ffn_expansion);
}

Var EatBlock::forward(Tape& t, Var x) const {
  const std::size_t h = x.dim(2), w = x.dim(3);
  Var y = gli_.forward(t, msra_.forward(t, x));
  return ops::from_tokens(ffn_.forward(t, ops::to_tokens(y)), h, w);
}

Var eat_block_forward(Tape& t, Var x, const EatBlock& b) { return b.forward(t, x); }

Backbone::Backbone(const ModuleBuilder& b, const ModelConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  const std::vector<std::size_t> flat(cfg.msra_dilations.size(), 1);
  stem_ = Msra(b.child("stem"), MsraSpec{.in_channels = cfg.in_channels,
                                         .out_channels = cfg.stage_dims[0],
                                         .stride = cfg.stem_stride,
                                         .kernel = cfg.local_kernel,
                                         .dilations = flat,
                                         .normalize = false});
  for (std::size_t s = 0; s < 4; ++s) {
    if (s > 0) {
      down_.emplace_back(b.child("down" + std::to_string(s + 1)),
                         MsraSpec{.in_channels = cfg.stage_dims[s - 1],
                                  .out_channels = cfg.stage_dims[s],
                                  .stride = 2,
                                  .kernel = cfg.local_kernel,
                                  .dilations = flat,
                                  .normalize = true});
    }
    std::vector<EatBlock> blocks;
    for (std::size_t j = 0; j < cfg.stage_depths[s]; ++j) {
      blocks.emplace_back(b.child("stage" + std::to_string(s + 1) + ".block" + std::to_string(j)), cfg, s);
    }
    stages_.push_back(std::move(blocks));
  }
}

BackboneOutput Backbone::forward(Tape& t, Var images) const {
  if (images.value().rank() != 4 || images.dim(1) != cfg_.in_channels) {
    throw ShapeError("backbone: images must be N×" + std::to_string(cfg_.in_channels) + "×H×W, got " +
                     to_string(images.shape()));
  }
  const std::size_t stride = cfg_.total_stride();
  if (images.dim(2) % stride != 0 || images.dim(3) % stride != 0) {
    throw ShapeError("backbone: height and width must be divisible by " + std::to_string(stride) + ", got " +
                     to_string(images.shape()));
  }
  BackboneOutput out;
  Var x = stem_.forward(t, images);
  for (std::size_t s = 0; s < 4; ++s) {
    if (s > 0) x = down_[s - 1].forward(t, x);
    for (const EatBlock& blk : stages_[s]) x = blk.forward(t, x);
    out.stages.push_back(x);
  }
  return out;
}

BackboneOutput backbone_forward(Tape& t, Var images, const Backbone& b) { return b.forward(t, images); }

// ---------------------------------------------------------------------------
// Task-Related Head

TaskHead::TaskHead(const ModuleBuilder& b, std::size_t channels, std::size_t num_classes) : channels_(channels) {
  ModuleBuilder mb = b;
  norm_ = Norm::create(b.child("norm"), channels, 1);
  token_ = &mb.make("token", {channels}, Init::FanInUniform, channels);
  q_ = Linear::create(b.child("q"), channels, channels);
  k_ = Linear::create(b.child("k"), channels, channels);
  cls_ = Linear::create(b.child("cls"), channels, num_classes, /*zero_init=*/true);
}

Var TaskHead::attend(Tape& t, Var tokens) const {
  const std::size_t n = tokens.dim(0);
  Var q = q_(t, ops::reshape(t.param(*token_), {1, 1, channels_}));
  std::vector<Var> copies(n, q);
  Var qn = n == 1 ? q : ops::concat(copies, 0);
  Var scores = ops::scale(ops::matmul(qn, ops::transpose(k_(t, tokens), 1, 2)),
                          1.0 / std::sqrt(static_cast<double>(channels_)));
  Var read = ops::matmul(ops::softmax(scores, -1), tokens);
  return ops::reshape(read, {n, channels_});
}

Var TaskHead::forward(Tape& t, Var features) const {
  if (features.value().rank() != 4 || features.dim(1) != channels_) {
    throw ShapeError("trh: features must be N×" + std::to_string(channels_) + "×h×w, got " +
                     to_string(features.shape()));
  }
  Var tokens = ops::to_tokens(norm_(t, features));
  Var fused = ops::add(attend(t, tokens), ops::mean_axis(tokens, 1));
  return cls_(t, fused);
}

Var trh_forward(Tape& t, Var features, const TaskHead& h) { return h.forward(t, features); }

// ---------------------------------------------------------------------------

EatFormer::EatFormer(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(init_seed, "init"));
  ModuleBuilder root(store_, rng);
  backbone_ = Backbone(root, cfg_);
  head_ = TaskHead(root.child("head"), cfg_.stage_dims[3], cfg_.num_classes);
}

Var EatFormer::forward(Tape& t, Var images) const {
  BackboneOutput features;
  return forward(t, images, features);
}

Var EatFormer::forward(Tape& t, Var images, BackboneOutput& features) const {
  features = backbone_.forward(t, images);
  return head_.forward(t, features.final());
}

}  // namespace eatkit

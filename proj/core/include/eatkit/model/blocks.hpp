#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "eatkit/model/config.hpp"
#include "eatkit/model/layers.hpp"

namespace eatkit {

/// Multi-Scale Region Aggregation.
///
/// Computes o_n = DepthwiseConv_n(Norm(x)) for every branch n (shared stride,
/// per-branch dilation), mixes them with WOM, projects with a 1×1 conv to the
/// output width and, when shape-preserving, adds x back. With stride > 1 it
/// serves as the stem or as the downsampler between stages.
struct MsraSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  std::size_t kernel = 3;
  std::vector<std::size_t> dilations{1};
  /// Layer-normalize the input first (disabled for the stem on raw pixels).
  bool normalize = true;
};

class Msra {
 public:
  Msra() = default;
  Msra(const ModuleBuilder& b, const MsraSpec& spec);

  Var forward(Tape& t, Var x) const;
  bool has_residual() const { return residual_; }
  const MsraSpec& spec() const { return spec_; }
  const std::vector<Conv>& branches() const { return branches_; }
  const Conv& projection() const { return proj_; }
  const WomMixer& mixer() const { return wom_; }

 private:
  MsraSpec spec_;
  std::optional<Norm> norm_;
  std::vector<Conv> branches_;
  WomMixer wom_;
  Conv proj_;
  bool residual_ = false;
};

/// Multi-head self-attention projections (f_q, f_k, f_v and the output map).
class Msa {
 public:
  Msa() = default;
  Msa(const ModuleBuilder& b, std::size_t channels, std::size_t heads, bool zero_out = true);

  /// tokens N×L×C → N×L×C.
  Var forward(Tape& t, Var tokens) const;
  /// Attention with separate query and key/value sources, both N×L×C.
  Var attend(Tape& t, Var query_tokens, Var kv_tokens) const;
  /// As attend(), with queries already passed through q().
  Var attend_projected(Tape& t, Var q, Var kv_tokens) const;

  std::size_t heads() const { return heads_; }
  std::size_t channels() const { return channels_; }
  const Linear& q() const { return q_; }
  const Linear& k() const { return k_; }
  const Linear& v() const { return v_; }
  const Linear& out() const { return o_; }

 private:
  std::size_t channels_ = 0;
  std::size_t heads_ = 1;
  Linear q_, k_, v_, o_;
};

/// Per-call intermediates of MD-MSA, exposed for tests.
struct MdMsaTrace {
  Var offsets;     // N×2×H×W, (dy, dx)
  Var modulation;  // N×1×H×W in (0, 1)
  Var resampled;   // X̂ after modulation
};

/// Modulated deformable MSA. Queries come from x; a 1×1 conv on the query map
/// predicts (dy, dx, m) per position; keys and values are projected from the
/// map resampled at the offset positions and scaled by sigmoid(m).
class MdMsa {
 public:
  MdMsa() = default;
  MdMsa(const ModuleBuilder& b, std::size_t channels, std::size_t heads, bool modulation_bypass);

  /// x N×C×H×W → tokens N×(H·W)×C.
  Var forward(Tape& t, Var x, MdMsaTrace* trace = nullptr) const;

  const Msa& attention() const { return msa_; }
  const Conv& offset_head() const { return md_; }
  bool modulation_bypass() const { return bypass_; }
  void set_modulation_bypass(bool on) { bypass_ = on; }

 private:
  Msa msa_;
  Conv md_;
  bool bypass_ = false;
};

/// Global and Local Interaction. Splits Norm(x) by channel into a global
/// part (attention) and a local part (depthwise k×k + pointwise conv),
/// scales each by its WOM weight, concatenates and adds x.
class Gli {
 public:
  Gli() = default;
  Gli(const ModuleBuilder& b, std::size_t channels, std::size_t global_channels, std::size_t heads,
      std::size_t kernel, bool deformable, bool modulation_bypass);

  Var forward(Tape& t, Var x) const;
  /// Unweighted global-path output on already-normalized global channels.
  Var global_path(Tape& t, Var x_global) const;
  /// Unweighted local-path output on already-normalized local channels.
  Var local_path(Tape& t, Var x_local) const;
  Var normalize(Tape& t, Var x) const { return norm_(t, x); }

  std::size_t channels() const { return channels_; }
  std::size_t global_channels() const { return global_; }
  std::size_t local_channels() const { return channels_ - global_; }
  bool deformable() const { return deformable_; }
  const WomMixer& mixer() const { return wom_; }
  const MdMsa& md_msa() const { return md_msa_; }
  const Msa& msa() const { return deformable_ ? md_msa_.attention() : msa_; }
  const Conv& local_depthwise() const { return local_dw_; }
  const Conv& local_pointwise() const { return local_pw_; }

 private:
  std::size_t channels_ = 0;
  std::size_t global_ = 0;
  bool deformable_ = true;
  Norm norm_;
  Msa msa_;
  MdMsa md_msa_;
  Conv local_dw_, local_pw_;
  WomMixer wom_;
};

/// Norm → Linear(C→eC) → GELU → Linear(eC→C) → residual, on tokens.
class Ffn {
 public:
  Ffn() = default;
  Ffn(const ModuleBuilder& b, std::size_t channels, double expansion);

  Var forward(Tape& t, Var tokens) const;
  const Linear& fc1() const { return fc1_; }
  const Linear& fc2() const { return fc2_; }

 private:
  Norm norm_;
  Linear fc1_, fc2_;
};

/// MSRA (stride 1) → GLI → FFN, each a y = f(x) + x residual. Shape-preserving.
class EatBlock {
 public:
  EatBlock() = default;
  EatBlock(const ModuleBuilder& b, const ModelConfig& cfg, std::size_t stage);

  Var forward(Tape& t, Var x) const;
  const Msra& msra() const { return msra_; }
  const Gli& gli() const { return gli_; }
  const Ffn& ffn() const { return ffn_; }
  Msra& msra() { return msra_; }
  Gli& gli() { return gli_; }

 private:
  Msra msra_;
  Gli gli_;
  Ffn ffn_;
};

struct BackboneOutput {
  /// Output of each of the four stages, NCHW.
  std::vector<Var> stages;
  Var final() const { return stages.back(); }
};

/// Stem MSRA (stride = stem_stride) followed by four stages of EAT blocks,
/// with stride-2 MSRA downsamplers between stages. No position embedding.
class Backbone {
 public:
  Backbone() = default;
  Backbone(const ModuleBuilder& b, const ModelConfig& cfg);

  BackboneOutput forward(Tape& t, Var images) const;
  const std::vector<std::vector<EatBlock>>& stages() const { return stages_; }
  std::vector<std::vector<EatBlock>>& stages() { return stages_; }
  const Msra& stem() const { return stem_; }
  const std::vector<Msra>& downsamplers() const { return down_; }

 private:
  ModelConfig cfg_;
  Msra stem_;
  std::vector<Msra> down_;
  std::vector<std::vector<EatBlock>> stages_;
};

/// Task-Related Head. A learnable task token attends (single head) over the
/// normalized final feature map; the attended vector is summed with the
/// global-average-pooled features and mapped to class logits.
class TaskHead {
 public:
  TaskHead() = default;
  TaskHead(const ModuleBuilder& b, std::size_t channels, std::size_t num_classes);

  /// features N×C×h×w → logits N×num_classes.
  Var forward(Tape& t, Var features) const;
  /// Attention read-out of the task token over tokens N×L×C → N×C.
  Var attend(Tape& t, Var tokens) const;

  const Linear& classifier() const { return cls_; }

 private:
  std::size_t channels_ = 0;
  Norm norm_;
  Parameter* token_ = nullptr;
  Linear q_, k_;
  Linear cls_;
};

/// Full classifier: backbone plus task head, owning all parameters.
class EatFormer {
 public:
  EatFormer(const ModelConfig& cfg, std::uint64_t init_seed);
  EatFormer(EatFormer&&) = default;
  EatFormer& operator=(EatFormer&&) = default;

  Var forward(Tape& t, Var images) const;
  Var forward(Tape& t, Var images, BackboneOutput& features) const;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  const Backbone& backbone() const { return backbone_; }
  Backbone& backbone() { return backbone_; }
  const TaskHead& head() const { return head_; }

 private:
  ModelConfig cfg_;
  ParameterStore store_;
  Backbone backbone_;
  TaskHead head_;
};

/// Closed-form GLI parameter count, evaluated exactly as
/// 5·Cg² + (2 − 2C − k²)·Cg + (k² + 2 + C)·C.
std::int64_t gli_param_count(std::int64_t channels, std::int64_t global_channels, std::int64_t kernel);

// Free-function forms of the block operations.
Var msra_forward(Tape& t, Var x, const Msra& m);
Var msa_forward(Tape& t, Var tokens, const Msa& m);
Var md_msa_forward(Tape& t, Var x, const MdMsa& m);
Var gli_forward(Tape& t, Var x, const Gli& g);
Var ffn_forward(Tape& t, Var tokens, const Ffn& f);
Var eat_block_forward(Tape& t, Var x, const EatBlock& b);
BackboneOutput backbone_forward(Tape& t, Var images, const Backbone& b);
Var trh_forward(Tape& t, Var features, const TaskHead& h);

}  // namespace eatkit

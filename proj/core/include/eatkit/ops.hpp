#pragma once

#include <optional>
#include <span>
#include <vector>

#include "eatkit/autodiff.hpp"

/// Differentiable primitives. Every function records one tape entry whose
/// name matches the function name, so gradient checks can report failures
/// per op.
namespace eatkit::ops {

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
  std::size_t groups = 1;
};

/// Output spatial extent of a convolution along one axis.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, const Conv2dOptions& opt);

/// input N×C×H×W, weight O×(C/groups)×kH×kW, optional bias O. Zero padding.
Var conv2d(Var input, Var weight, std::optional<Var> bias, const Conv2dOptions& opt);

/// Normalizes along `axis`, then applies per-channel gamma/beta.
Var layer_norm(Var input, int axis, Var gamma, Var beta, double eps = 1e-6);

/// Max-subtracted softmax along `axis`.
Var softmax(Var input, int axis);

/// Contracts the last axis: input ...×Cin, weight Cout×Cin, bias Cout.
Var linear(Var input, Var weight, std::optional<Var> bias);

/// Batched matrix product over the last two axes; leading axes must match.
Var matmul(Var a, Var b);

/// Swaps two axes (materialized copy).
Var transpose(Var input, int axis0, int axis1);
Var reshape(Var input, Shape shape);

Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product of equal shapes.
Var mul(Var a, Var b);
/// a * b where b has size 1 on any axis it broadcasts over; ranks must match.
Var mul_broadcast(Var a, Var b);
Var scale(Var input, double factor);

Var gelu(Var input);
Var sigmoid(Var input);

/// Σ_i weights[i] * xs[i]; weights is a 1-D Var of length xs.size().
Var weighted_sum(std::span<const Var> xs, Var weights);

Var concat(std::span<const Var> xs, int axis);
/// Elements [begin, end) along `axis`.
Var slice(Var input, int axis, std::size_t begin, std::size_t end);
inline Var concat_channels(std::span<const Var> xs) { return concat(xs, 1); }
std::vector<Var> split_channels(Var input, std::span<const std::size_t> sizes);

/// Mean along `axis`, which is removed from the shape.
Var mean_axis(Var input, int axis);
/// N×C×H×W → N×C.
Var mean_pool_spatial(Var input);
/// Sum of all elements → shape {1}.
Var sum(Var input);

/// Mean over the batch of -log softmax(logits)[label]. logits N×K.
Var cross_entropy(Var logits, std::span<const int> labels);

/// Samples a C×H×W map at fractional (y, x) given as a 2-element Var.
/// Out-of-range taps read as zero. Differentiable in the map and coordinates;
/// on integer coordinates the coordinate gradient is the right-hand limit.
Var bilinear_sample(Var map, Var yx);

/// Resamples N×C×H×W at (i + dy, j + dx) for every pixel, with offsets
/// N×2×H×W holding (dy, dx). Same padding and gradient rules as bilinear_sample.
Var deform_resample(Var map, Var offsets);

/// Copy with no gradient path.
Var detach(Var input);

/// NCHW → N×(H·W)×C token layout, rows in row-major pixel order.
Var to_tokens(Var input);
/// N×L×C → N×C×H×W with L = H·W.
Var from_tokens(Var tokens, std::size_t height, std::size_t width);

}  // namespace eatkit::ops

namespace eatkit {

/// Bilinear lookup on a plain C×H×W tensor (zero padding), returns C values.
Tensor bilinear_sample(const Tensor& map, double y, double x);

}  // namespace eatkit

#include "eatkit/data/augment.hpp"

#include <cmath>
#include <numbers>

#include "eatkit/data/image.hpp"

namespace eatkit {
namespace {

void expect_chw(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("augment: expected C×H×W, got " + to_string(image.shape()));
}

// out(y, x) = in(map(y, x)) for every channel.
template <class Map>
Tensor remap(const Tensor& image, Map map) {
  expect_chw(image);
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  Tensor out(image.shape());
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      const auto [sy, sx] = map(static_cast<double>(i), static_cast<double>(j));
      for (std::size_t c = 0; c < C; ++c) out[(c * H + i) * W + j] = sample_bilinear(image, c, sy, sx);
    }
  return out;
}

}  // namespace

AugmentDecision draw_augment(Rng& rng, const AugmentOptions& opt) {
  AugmentDecision d;
  d.flip = rng.bernoulli(opt.flip_probability);
  if (rng.bernoulli(opt.rotate_probability)) {
    d.rotation_degrees = rng.uniform(-opt.max_rotation_degrees, opt.max_rotation_degrees);
  }
  if (rng.bernoulli(opt.zoom_probability)) d.zoom = rng.uniform(opt.zoom_min, opt.zoom_max);
  return d;
}

Tensor flip_horizontal(const Tensor& image) {
  expect_chw(image);
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  Tensor out(image.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) out[(c * H + i) * W + j] = image[(c * H + i) * W + (W - 1 - j)];
  return out;
}

Tensor rotate(const Tensor& image, double degrees) {
  expect_chw(image);
  const double cy = (static_cast<double>(image.dim(1)) - 1.0) / 2.0;
  const double cx = (static_cast<double>(image.dim(2)) - 1.0) / 2.0;
  const double rad = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  return remap(image, [&](double y, double x) {
    const double dy = y - cy, dx = x - cx;
    return std::pair{cy + c * dy + s * dx, cx - s * dy + c * dx};
  });
}

Tensor zoom(const Tensor& image, double scale) {
  expect_chw(image);
  if (!(scale > 0.0)) throw std::invalid_argument("zoom: scale must be positive");
  const double cy = (static_cast<double>(image.dim(1)) - 1.0) / 2.0;
  const double cx = (static_cast<double>(image.dim(2)) - 1.0) / 2.0;
  return remap(image, [&](double y, double x) { return std::pair{cy + (y - cy) / scale, cx + (x - cx) / scale}; });
}

Tensor apply_augment(const Tensor& image, const AugmentDecision& d) {
  Tensor out = d.flip ? flip_horizontal(image) : image;
  if (d.rotation_degrees) out = rotate(out, *d.rotation_degrees);
  if (d.zoom) out = zoom(out, *d.zoom);
  return out;
}

Tensor augment(const Tensor& image, Rng& rng, const AugmentOptions& opt) {
  return apply_augment(image, draw_augment(rng, opt));
}

}  // namespace eatkit

#pragma once

#include <optional>

#include "eatkit/rng.hpp"
#include "eatkit/tensor.hpp"

namespace eatkit {

struct AugmentOptions {
  double flip_probability = 0.5;
  double rotate_probability = 0.5;
  double max_rotation_degrees = 15.0;
  double zoom_probability = 0.5;
  double zoom_min = 0.9;
  double zoom_max = 1.1;
};

/// The random choices behind one augmentation, drawn before any pixel work so
/// tests can force them.
struct AugmentDecision {
  bool flip = false;
  /// Counter-clockwise as displayed (rows grow downwards).
  std::optional<double> rotation_degrees;
  /// > 1 magnifies the center.
  std::optional<double> zoom;
};

AugmentDecision draw_augment(Rng& rng, const AugmentOptions& opt = {});

/// Applies flip, rotation and zoom in that order. Rotation and zoom resample
/// bilinearly about the image center with zero fill. Shape is preserved.
Tensor apply_augment(const Tensor& image, const AugmentDecision& d);

Tensor augment(const Tensor& image, Rng& rng, const AugmentOptions& opt = {});

Tensor flip_horizontal(const Tensor& image);
Tensor rotate(const Tensor& image, double degrees);
Tensor zoom(const Tensor& image, double scale);

}  // namespace eatkit

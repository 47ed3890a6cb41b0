#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "eatkit/tensor.hpp"

namespace eatkit {

/// Unreadable, malformed or missing input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Decoded binary PGM (P5, one channel) or PPM (P6, three channels).
struct PnmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::uint32_t maxval = 255;
  /// Row-major, channel-interleaved samples.
  std::vector<std::uint16_t> samples;

  bool operator==(const PnmImage&) const = default;
};

/// Header comments are accepted. Errors name the byte offset of the problem.
PnmImage decode_pnm(const std::vector<std::uint8_t>& bytes);
/// Canonical form "P5\n<w> <h>\n<maxval>\n" followed by the raster.
std::vector<std::uint8_t> encode_pnm(const PnmImage& image);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

/// 3×H×W in [0, 1]: samples divided by maxval, grayscale replicated.
Tensor to_tensor(const PnmImage& image);
/// Inverse of to_tensor for a 3×H×W tensor (values clamped to [0, 1], 8-bit P6).
PnmImage from_tensor(const Tensor& image);

Tensor load_image(const std::filesystem::path& path);

/// Bilinear resize of C×H×W with half-pixel centers; same size returns a copy.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

/// Bilinear read of channel c at fractional (y, x); taps outside the image are 0.
double sample_bilinear(const Tensor& image, std::size_t c, double y, double x);

}  // namespace eatkit

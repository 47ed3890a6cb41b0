#include "eatkit/data/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

namespace eatkit {
namespace {

class HeaderReader {
 public:
  explicit HeaderReader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (v > (1u << 30)) throw DataError(std::string("pnm: ") + what + " too large at byte offset " + std::to_string(start));
      ++pos_;
    }
    if (pos_ == start) {
      throw DataError(std::string("pnm: expected ") + what + " at byte offset " + std::to_string(start) +
                      (pos_ >= bytes_.size() ? " (end of file)" : ""));
    }
    return v;
  }

  std::size_t pos() const { return pos_; }
  void advance() { ++pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

PnmImage decode_pnm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw DataError("pnm: missing P5/P6 magic at byte offset 0");
  }
  PnmImage img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  HeaderReader r(bytes);
  r.advance();
  r.advance();
  img.width = r.number("width");
  img.height = r.number("height");
  const std::size_t maxval = r.number("maxval");
  if (img.width == 0 || img.height == 0) throw DataError("pnm: zero image dimension");
  if (maxval == 0 || maxval > 65535) {
    throw DataError("pnm: maxval " + std::to_string(maxval) + " outside [1, 65535] before byte offset " +
                    std::to_string(r.pos()));
  }
  img.maxval = static_cast<std::uint32_t>(maxval);
  if (r.pos() >= bytes.size() || !std::isspace(bytes[r.pos()])) {
    throw DataError("pnm: expected a single whitespace after maxval at byte offset " + std::to_string(r.pos()));
  }
  const std::size_t start = r.pos() + 1;
  const std::size_t bps = maxval > 255 ? 2 : 1;
  const std::size_t count = img.width * img.height * img.channels;
  const std::size_t need = count * bps;
  if (bytes.size() - start < need) {
    throw DataError("pnm: truncated raster at byte offset " + std::to_string(bytes.size()) + ", expected " +
                    std::to_string(start + need) + " bytes");
  }
  img.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t v = bytes[start + i * bps];
    if (bps == 2) v = (v << 8) | bytes[start + i * bps + 1];
    if (v > maxval) {
      throw DataError("pnm: sample " + std::to_string(v) + " exceeds maxval at byte offset " +
                      std::to_string(start + i * bps));
    }
    img.samples[i] = static_cast<std::uint16_t>(v);
  }
  return img;
}

std::vector<std::uint8_t> encode_pnm(const PnmImage& img) {
  if (img.channels != 1 && img.channels != 3) throw DataError("pnm: channels must be 1 or 3");
  if (img.samples.size() != img.width * img.height * img.channels) throw DataError("pnm: sample count mismatch");
  const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(img.width) + " " +
                             std::to_string(img.height) + "\n" + std::to_string(img.maxval) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const bool wide = img.maxval > 255;
  for (std::uint16_t v : img.samples) {
    if (wide) out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Tensor to_tensor(const PnmImage& img) {
  Tensor t({3, img.height, img.width});
  const std::size_t plane = img.height * img.width;
  const double scale = 1.0 / static_cast<double>(img.maxval);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t src = img.channels == 1 ? p : p * 3 + c;
      t[c * plane + p] = static_cast<double>(img.samples[src]) * scale;
    }
  }
  return t;
}

PnmImage from_tensor(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("from_tensor: expected 3×H×W, got " + to_string(image.shape()));
  PnmImage img;
  img.channels = 3;
  img.height = image.dim(1);
  img.width = image.dim(2);
  const std::size_t plane = img.height * img.width;
  img.samples.resize(plane * 3);
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c)
      img.samples[p * 3 + c] =
          static_cast<std::uint16_t>(std::lround(std::clamp(image[c * plane + p], 0.0, 1.0) * 255.0));
  return img;
}

Tensor load_image(const std::filesystem::path& path) {
  try {
    return to_tensor(decode_pnm(read_file(path)));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

double sample_bilinear(const Tensor& image, std::size_t c, double y, double x) {
  const auto h = static_cast<std::ptrdiff_t>(image.dim(1));
  const auto w = static_cast<std::ptrdiff_t>(image.dim(2));
  const double fy = std::floor(y), fx = std::floor(x);
  const auto y0 = static_cast<std::ptrdiff_t>(fy), x0 = static_cast<std::ptrdiff_t>(fx);
  const double ay = y - fy, ax = x - fx;
  const double* plane = image.raw() + c * image.dim(1) * image.dim(2);
  auto at = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) {
    return (yy < 0 || yy >= h || xx < 0 || xx >= w) ? 0.0 : plane[yy * w + xx];
  };
  return (1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x0 + 1)) +
         ay * ((1 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1));
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3) throw ShapeError("resize: expected C×H×W, got " + to_string(image.shape()));
  if (height == 0 || width == 0) throw ShapeError("resize: zero target size");
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (H == height && W == width) return image;
  Tensor out({C, height, width});
  const double sy = static_cast<double>(H) / static_cast<double>(height);
  const double sx = static_cast<double>(W) / static_cast<double>(width);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < height; ++i) {
      // edge-clamped source coordinates
      const double y = std::clamp((static_cast<double>(i) + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
      for (std::size_t j = 0; j < width; ++j) {
        const double x = std::clamp((static_cast<double>(j) + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
        out[(c * height + i) * width + j] = sample_bilinear(image, c, y, x);
      }
    }
  return out;
}

}  // namespace eatkit

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace eatkit {

using Shape = std::vector<std::size_t>;

/// Thrown when operand shapes are incompatible. The message names the axis.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a NaN or Inf is produced where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles. Image tensors are NCHW.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_, 0.0); }
  /// 1-D tensor from a list of values.
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  /// Size of `axis`; negative values count from the back.
  std::size_t dim(int axis) const;
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Bounds-checked multi-index access.
  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  /// Same data, new shape of equal element count.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  void fill(double v);
  /// this += other, shapes must match.
  void add_inplace(const Tensor& other);

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  /// Throws NumericError naming `what` when any element is NaN or Inf.
  void assert_finite(std::string_view what) const;

  double sum() const;
  double max_abs() const;

  bool operator==(const Tensor& other) const = default;

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_;
};

/// Normalizes a possibly negative axis against `rank`; throws on out-of-range.
std::size_t normalize_axis(int axis, std::size_t rank);

/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace eatkit

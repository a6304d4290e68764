#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spotlight {

/// Raised when operand shapes violate an operator's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NCHW extent of a 4-D tensor.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense row-major NCHW array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
               shape_.w +
           w;
  }
  double& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  double at(int n, int c, int h, int w) const {
    return data_[offset(n, c, h, w)];
  }

  void fill(double v);
  double sum() const;
  bool all_finite() const;

 private:
  Shape shape_{};
  std::vector<double> data_;
};

/// Geometry of a 2-D convolution. Padding is given per side.
struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int dilation = 1;
  int pad_top = 0;
  int pad_bottom = 0;
  int pad_left = 0;
  int pad_right = 0;
  bool has_bias = true;

  /// Square kernel with symmetric "same"-style padding of `pad` on all sides.
  static ConvSpec square(int in, int out, int k, int stride = 1,
                         int dilation = 1, int pad = 0, bool bias = true);
  /// Kernel kh x kw, stride 1, padding chosen so spatial size is preserved.
  static ConvSpec same(int in, int out, int kh, int kw, int dilation = 1,
                       bool bias = true);

  /// floor((in + pad_total - dilation*(k-1) - 1)/stride) + 1
  int out_h(int in_h) const;
  int out_w(int in_w) const;
  /// Spatial size produced when this geometry is used transposed.
  int transposed_out_h(int in_h) const;
  int transposed_out_w(int in_w) const;

  void validate() const;
};

}  // namespace spotlight

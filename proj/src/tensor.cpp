#include "spotlight/tensor.hpp"

#include <cmath>
#include <numeric>

namespace spotlight {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
         std::to_string(h) + "," + std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative tensor extent " + shape.str());
  }
  data_.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape.numel()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape.str());
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double Tensor::sum() const {
  return std::accumulate(data_.begin(), data_.end(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

ConvSpec ConvSpec::square(int in, int out, int k, int stride, int dilation,
                          int pad, bool bias) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel_h = s.kernel_w = k;
  s.stride = stride;
  s.dilation = dilation;
  s.pad_top = s.pad_bottom = s.pad_left = s.pad_right = pad;
  s.has_bias = bias;
  return s;
}

ConvSpec ConvSpec::same(int in, int out, int kh, int kw, int dilation,
                        bool bias) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel_h = kh;
  s.kernel_w = kw;
  s.dilation = dilation;
  // Odd kernels only; (1x9) -> (0,4), (3x3, d=2) -> 2.
  s.pad_top = s.pad_bottom = dilation * (kh - 1) / 2;
  s.pad_left = s.pad_right = dilation * (kw - 1) / 2;
  s.has_bias = bias;
  return s;
}

namespace {
int conv_out(int in, int pad_total, int dilation, int k, int stride) {
  const int span = in + pad_total - dilation * (k - 1) - 1;
  if (span < 0) return 0;
  return span / stride + 1;
}
}  // namespace

int ConvSpec::out_h(int in_h) const {
  return conv_out(in_h, pad_top + pad_bottom, dilation, kernel_h, stride);
}
int ConvSpec::out_w(int in_w) const {
  return conv_out(in_w, pad_left + pad_right, dilation, kernel_w, stride);
}
int ConvSpec::transposed_out_h(int in_h) const {
  return (in_h - 1) * stride - (pad_top + pad_bottom) +
         dilation * (kernel_h - 1) + 1;
}
int ConvSpec::transposed_out_w(int in_w) const {
  return (in_w - 1) * stride - (pad_left + pad_right) +
         dilation * (kernel_w - 1) + 1;
}

void ConvSpec::validate() const {
  if (in_channels <= 0 || out_channels <= 0 || kernel_h <= 0 ||
      kernel_w <= 0 || stride <= 0 || dilation <= 0) {
    throw ShapeError("conv spec requires positive channels/kernel/stride/dilation");
  }
  if (pad_top < 0 || pad_bottom < 0 || pad_left < 0 || pad_right < 0) {
    throw ShapeError("conv spec padding must be non-negative");
  }
}

}  // namespace spotlight

// Convolution and transposed convolution via im2col + GEMM.
//
// The transposed convolution reuses the same column geometry: its forward pass
// is the adjoint (col2im of W^T x) of a convolution mapping the output image
// back onto the input grid.

#include <Eigen/Core>

#include <vector>

#include "spotlight/ops.hpp"

namespace spotlight::ops {
namespace {

struct ColumnGeometry {
  int channels;  // image channels
  int h, w;      // image size
  int kh, kw;
  int stride, dilation;
  int pad_top, pad_left;
  int out_h, out_w;  // column grid

  int rows() const { return channels * kh * kw; }
  int cols() const { return out_h * out_w; }
  bool is_pointwise() const {
    return kh == 1 && kw == 1 && stride == 1 && pad_top == 0 &&
           pad_left == 0 && out_h == h && out_w == w;
  }
};

ColumnGeometry geometry_for(const ConvSpec& spec, int channels, int h, int w,
                            int out_h, int out_w) {
  return {channels,     h,          w,           spec.kernel_h,
          spec.kernel_w, spec.stride, spec.dilation, spec.pad_top,
          spec.pad_left, out_h,      out_w};
}

void im2col(const double* img, const ColumnGeometry& g, double* col) {
  const int cols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    const double* plane = img + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        double* row =
            col + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * cols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad_top + ki * g.dilation;
          double* dst = row + static_cast<std::size_t>(oy) * g.out_w;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad_left + kj * g.dilation;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Accumulates columns back onto the image (adjoint of im2col).
void col2im(const double* col, const ColumnGeometry& g, double* img) {
  const int cols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    double* plane = img + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const double* row =
            col + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * cols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad_top + ki * g.dilation;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + static_cast<std::size_t>(oy) * g.out_w;
          double* dst = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad_left + kj * g.dilation;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// C(MxN) = op(A) * op(B) + beta * C, row-major, beta either 0 or 1.
// A is stored m x k (k x m when transposed); likewise B.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a,
          const double* b, double beta, double* c) {
  using RowMajor =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const RowMajor>;
  Eigen::Map<RowMajor> out(c, m, n);
  const ConstMap ma(a, trans_a ? k : m, trans_a ? m : k);
  const ConstMap mb(b, trans_b ? n : k, trans_b ? k : n);
  if (beta == 0.0) {
    out.setZero();
  } else if (beta != 1.0) {
    out *= beta;
  }
  if (trans_a && trans_b) {
    out.noalias() += ma.transpose() * mb.transpose();
  } else if (trans_a) {
    out.noalias() += ma.transpose() * mb;
  } else if (trans_b) {
    out.noalias() += ma * mb.transpose();
  } else {
    out.noalias() += ma * mb;
  }
}

void check_bias(const Var& bias, int channels) {
  if (!bias.defined()) return;
  if (!(bias.shape() == Shape{1, channels, 1, 1})) {
    throw ShapeError("bias shape " + bias.shape().str() + " expected (1," +
                     std::to_string(channels) + ",1,1)");
  }
}

void add_bias(Tensor& out, const Var& bias) {
  if (!bias.defined()) return;
  const Shape s = out.shape();
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double b = bias.value()[c];
      double* p = out.raw() + out.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) p[i] += b;
    }
  }
}

Tensor bias_grad(const Tensor& gy, double sign) {
  const Shape s = gy.shape();
  Tensor g({1, s.c, 1, 1});
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* p = gy.raw() + gy.offset(n, c, 0, 0);
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      g[c] += sign * acc;
    }
  }
  return g;
}

void scale_in_place(Tensor& t, double sign) {
  if (sign == 1.0) return;
  for (double& v : t.data()) v *= sign;
}

}  // namespace

Var conv2d(Tape& tape, const Var& input, const ConvSpec& spec,
           const Var& weights, const Var& bias) {
  spec.validate();
  const Shape in = input.shape();
  if (in.c != spec.in_channels) {
    throw ShapeError("conv2d input channels " + std::to_string(in.c) +
                     " != spec " + std::to_string(spec.in_channels));
  }
  const Shape wshape{spec.out_channels, spec.in_channels, spec.kernel_h,
                     spec.kernel_w};
  if (!(weights.shape() == wshape)) {
    throw ShapeError("conv2d weights " + weights.shape().str() + " expected " +
                     wshape.str());
  }
  check_bias(bias, spec.out_channels);
  const int oh = spec.out_h(in.h);
  const int ow = spec.out_w(in.w);
  if (oh < 1 || ow < 1) {
    throw ShapeError("conv2d output spatial size is non-positive for input " +
                     in.str());
  }
  const Shape os{in.n, spec.out_channels, oh, ow};
  Tensor out(os);

  const ColumnGeometry g = geometry_for(spec, in.c, in.h, in.w, oh, ow);
  const int k = g.rows();
  const int p = g.cols();
  const bool pointwise = g.is_pointwise();
  std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(k) * p);
  for (int n = 0; n < in.n; ++n) {
    const double* x = input.value().raw() + input.value().offset(n, 0, 0, 0);
    if (!pointwise) im2col(x, g, col.data());
    gemm(false, false, spec.out_channels, p, k, weights.value().raw(),
         pointwise ? x : col.data(), 0.0, out.raw() + out.offset(n, 0, 0, 0));
  }
  add_bias(out, bias);
  tape.add_macs(static_cast<std::int64_t>(os.numel()) * k);

  Var result(std::move(out), tape.wants({&input, &weights, &bias}));
  if (result.requires_grad()) {
    tape.record([input, weights, bias, result, g, spec]() mutable {
      if (!result.has_grad()) return;
      const double sign = fault::armed(OpKind::kConv2d) ? -1.0 : 1.0;
      const Tensor& gy = result.grad();
      const Shape in = input.shape();
      const int k = g.rows();
      const int p = g.cols();
      const int co = spec.out_channels;
      const bool pointwise = g.is_pointwise();
      std::vector<double> col(static_cast<std::size_t>(k) * p);
      if (input.requires_grad()) {
        Tensor gx(in);
        for (int n = 0; n < in.n; ++n) {
          const double* gyn = gy.raw() + gy.offset(n, 0, 0, 0);
          double* gxn = gx.raw() + gx.offset(n, 0, 0, 0);
          if (pointwise) {
            gemm(true, false, k, p, co, weights.value().raw(), gyn, 0.0, gxn);
          } else {
            gemm(true, false, k, p, co, weights.value().raw(), gyn, 0.0,
                 col.data());
            col2im(col.data(), g, gxn);
          }
        }
        scale_in_place(gx, sign);
        input.accumulate_grad(gx);
      }
      if (weights.requires_grad()) {
        Tensor gw(weights.shape());
        for (int n = 0; n < in.n; ++n) {
          const double* x = input.value().raw() + input.value().offset(n, 0, 0, 0);
          if (!pointwise) im2col(x, g, col.data());
          gemm(false, true, co, k, p, gy.raw() + gy.offset(n, 0, 0, 0),
               pointwise ? x : col.data(), 1.0, gw.raw());
        }
        scale_in_place(gw, sign);
        weights.accumulate_grad(gw);
      }
      if (bias.requires_grad()) bias.accumulate_grad(bias_grad(gy, sign));
    });
  }
  return result;
}

Var conv_transpose2d(Tape& tape, const Var& input, const ConvSpec& spec,
                     const Var& weights, const Var& bias) {
  spec.validate();
  const Shape in = input.shape();
  if (in.c != spec.in_channels) {
    throw ShapeError("conv_transpose2d input channels " +
                     std::to_string(in.c) + " != spec " +
                     std::to_string(spec.in_channels));
  }
  const Shape wshape{spec.in_channels, spec.out_channels, spec.kernel_h,
                     spec.kernel_w};
  if (!(weights.shape() == wshape)) {
    throw ShapeError("conv_transpose2d weights " + weights.shape().str() +
                     " expected " + wshape.str());
  }
  check_bias(bias, spec.out_channels);
  const int oh = spec.transposed_out_h(in.h);
  const int ow = spec.transposed_out_w(in.w);
  if (oh < 1 || ow < 1 || spec.out_h(oh) != in.h || spec.out_w(ow) != in.w) {
    throw ShapeError("conv_transpose2d geometry inconsistent for input " +
                     in.str());
  }
  const Shape os{in.n, spec.out_channels, oh, ow};
  Tensor out(os);

  // Columns live on the input grid; the image is the output.
  const ColumnGeometry g =
      geometry_for(spec, spec.out_channels, oh, ow, in.h, in.w);
  const int k = g.rows();
  const int p = g.cols();
  std::vector<double> col(static_cast<std::size_t>(k) * p);
  for (int n = 0; n < in.n; ++n) {
    const double* x = input.value().raw() + input.value().offset(n, 0, 0, 0);
    gemm(true, false, k, p, spec.in_channels, weights.value().raw(), x, 0.0,
         col.data());
    col2im(col.data(), g, out.raw() + out.offset(n, 0, 0, 0));
  }
  add_bias(out, bias);
  tape.add_macs(static_cast<std::int64_t>(in.numel()) * k);

  Var result(std::move(out), tape.wants({&input, &weights, &bias}));
  if (result.requires_grad()) {
    tape.record([input, weights, bias, result, g, spec]() mutable {
      if (!result.has_grad()) return;
      const double sign = fault::armed(OpKind::kConvTranspose2d) ? -1.0 : 1.0;
      const Tensor& gy = result.grad();
      const Shape in = input.shape();
      const int k = g.rows();
      const int p = g.cols();
      const int ci = spec.in_channels;
      std::vector<double> col(static_cast<std::size_t>(k) * p);
      Tensor gx(in);
      Tensor gw(weights.shape());
      for (int n = 0; n < in.n; ++n) {
        im2col(gy.raw() + gy.offset(n, 0, 0, 0), g, col.data());
        if (input.requires_grad()) {
          gemm(false, false, ci, p, k, weights.value().raw(), col.data(), 0.0,
               gx.raw() + gx.offset(n, 0, 0, 0));
        }
        if (weights.requires_grad()) {
          gemm(false, true, ci, k, p,
               input.value().raw() + input.value().offset(n, 0, 0, 0),
               col.data(), 1.0, gw.raw());
        }
      }
      if (input.requires_grad()) {
        scale_in_place(gx, sign);
        input.accumulate_grad(gx);
      }
      if (weights.requires_grad()) {
        scale_in_place(gw, sign);
        weights.accumulate_grad(gw);
      }
      if (bias.requires_grad()) bias.accumulate_grad(bias_grad(gy, sign));
    });
  }
  return result;
}

}  // namespace spotlight::ops

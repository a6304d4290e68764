#include <cmath>

#include "spotlight/ops.hpp"

namespace spotlight::ops {
namespace {

double sign_of(OpKind kind) { return fault::armed(kind) ? -1.0 : 1.0; }

void require_same(const Var& a, const Var& b, const char* op) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() +
                     " vs " + b.shape().str());
  }
}

}  // namespace

RunningStats RunningStats::identity(int channels) {
  return {Tensor({1, channels, 1, 1}, 0.0), Tensor({1, channels, 1, 1}, 1.0)};
}

Var batch_norm(Tape& tape, const Var& input, const Var& gamma, const Var& beta,
               RunningStats& stats, Mode mode, double momentum,
               double epsilon) {
  const Shape s = input.shape();
  const Shape cs{1, s.c, 1, 1};
  if (!(gamma.shape() == cs) || !(beta.shape() == cs) ||
      !(stats.mean.shape() == cs) || !(stats.var.shape() == cs)) {
    throw ShapeError("batch_norm parameters must have shape " + cs.str());
  }
  const std::size_t plane = s.plane();
  const std::size_t count = static_cast<std::size_t>(s.n) * plane;
  if (mode == Mode::kTrain && count == 0) {
    throw ShapeError("batch_norm in train mode needs at least one element per channel");
  }

  Tensor xhat(s);
  Tensor out(s);
  std::vector<double> invstd(s.c);
  const Tensor& x = input.value();
  for (int c = 0; c < s.c; ++c) {
    double mean = 0.0;
    double var = 0.0;
    if (mode == Mode::kTrain) {
      for (int n = 0; n < s.n; ++n) {
        const double* p = x.raw() + x.offset(n, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) mean += p[i];
      }
      mean /= static_cast<double>(count);
      for (int n = 0; n < s.n; ++n) {
        const double* p = x.raw() + x.offset(n, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(count);
      const double unbiased =
          count > 1 ? var * static_cast<double>(count) / (count - 1) : var;
      stats.mean[c] = (1.0 - momentum) * stats.mean[c] + momentum * mean;
      stats.var[c] = (1.0 - momentum) * stats.var[c] + momentum * unbiased;
    } else {
      mean = stats.mean[c];
      var = stats.var[c];
    }
    invstd[c] = 1.0 / std::sqrt(var + epsilon);
    const double g = gamma.value()[c];
    const double b = beta.value()[c];
    for (int n = 0; n < s.n; ++n) {
      const std::size_t off = x.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (x[off + i] - mean) * invstd[c];
        xhat[off + i] = xh;
        out[off + i] = g * xh + b;
      }
    }
  }

  Var result(std::move(out), tape.wants({&input, &gamma, &beta}));
  if (result.requires_grad()) {
    tape.record([input, gamma, beta, result, xhat = std::move(xhat),
                 invstd = std::move(invstd), mode, count]() mutable {
      if (!result.has_grad()) return;
      const double sign = sign_of(OpKind::kBatchNorm);
      const Tensor& gy = result.grad();
      const Shape s = gy.shape();
      const std::size_t plane = s.plane();
      Tensor gx(s);
      Tensor gg({1, s.c, 1, 1});
      Tensor gb({1, s.c, 1, 1});
      for (int c = 0; c < s.c; ++c) {
        double sum_gy = 0.0;
        double sum_gy_xh = 0.0;
        for (int n = 0; n < s.n; ++n) {
          const std::size_t off = gy.offset(n, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) {
            sum_gy += gy[off + i];
            sum_gy_xh += gy[off + i] * xhat[off + i];
          }
        }
        gg[c] = sign * sum_gy_xh;
        gb[c] = sign * sum_gy;
        const double g = gamma.value()[c];
        const double m = static_cast<double>(count);
        for (int n = 0; n < s.n; ++n) {
          const std::size_t off = gy.offset(n, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) {
            double v;
            if (mode == Mode::kTrain) {
              v = g * invstd[c] / m *
                  (m * gy[off + i] - sum_gy - xhat[off + i] * sum_gy_xh);
            } else {
              v = g * invstd[c] * gy[off + i];
            }
            gx[off + i] = sign * v;
          }
        }
      }
      if (input.requires_grad()) input.accumulate_grad(gx);
      if (gamma.requires_grad()) gamma.accumulate_grad(gg);
      if (beta.requires_grad()) beta.accumulate_grad(gb);
    });
  }
  return result;
}

Var relu(Tape& tape, const Var& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x.value()[i] > 0.0 ? x.value()[i] : 0.0;
  }
  Var result(std::move(out), tape.wants({&x}));
  if (result.requires_grad()) {
    tape.record([x, result]() mutable {
      if (!result.has_grad()) return;
      const double sign = sign_of(OpKind::kRelu);
      Tensor g(x.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = x.value()[i] > 0.0 ? sign * result.grad()[i] : 0.0;
      }
      x.accumulate_grad(g);
    });
  }
  return result;
}

Var sigmoid(Tape& tape, const Var& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 1.0 / (1.0 + std::exp(-x.value()[i]));
  }
  Var result(std::move(out), tape.wants({&x}));
  if (result.requires_grad()) {
    tape.record([x, result]() mutable {
      if (!result.has_grad()) return;
      const double sign = sign_of(OpKind::kSigmoid);
      Tensor g(x.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = result.value()[i];
        g[i] = sign * result.grad()[i] * y * (1.0 - y);
      }
      x.accumulate_grad(g);
    });
  }
  return result;
}

Var add(Tape& tape, const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.value()[i] + b.value()[i];
  }
  Var result(std::move(out), tape.wants({&a, &b}));
  if (result.requires_grad()) {
    tape.record([a, b, result]() mutable {
      if (!result.has_grad()) return;
      const double sign = sign_of(OpKind::kAdd);
      Tensor g = result.grad();
      if (sign != 1.0) {
        for (double& v : g.data()) v *= sign;
      }
      if (a.requires_grad()) a.accumulate_grad(g);
      if (b.requires_grad()) b.accumulate_grad(g);
    });
  }
  return result;
}

Var mul(Tape& tape, const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.value()[i] * b.value()[i];
  }
  Var result(std::move(out), tape.wants({&a, &b}));
  if (result.requires_grad()) {
    tape.record([a, b, result]() mutable {
      if (!result.has_grad()) return;
      const double sign = sign_of(OpKind::kMul);
      const Tensor& gy = result.grad();
      if (a.requires_grad()) {
        Tensor g(a.shape());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = sign * gy[i] * b.value()[i];
        a.accumulate_grad(g);
      }
      if (b.requires_grad()) {
        Tensor g(b.shape());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = sign * gy[i] * a.value()[i];
        b.accumulate_grad(g);
      }
    });
  }
  return result;
}

Var scale(Tape& tape, const Var& x, double factor) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x.value()[i];
  Var result(std::move(out), tape.wants({&x}));
  if (result.requires_grad()) {
    tape.record([x, result, factor]() mutable {
      if (!result.has_grad()) return;
      const double sign = sign_of(OpKind::kScale);
      Tensor g(x.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = sign * factor * result.grad()[i];
      }
      x.accumulate_grad(g);
    });
  }
  return result;
}

Var mul_scalar_param(Tape& tape, const Var& x, const Var& alpha) {
  if (alpha.value().size() != 1) {
    throw ShapeError("mul_scalar_param expects a scalar parameter, got " +
                     alpha.shape().str());
  }
  const double a = alpha.value()[0];
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x.value()[i];
  Var result(std::move(out), tape.wants({&x, &alpha}));
  if (result.requires_grad()) {
    tape.record([x, alpha, result]() mutable {
      if (!result.has_grad()) return;
      const double sign = sign_of(OpKind::kMulScalarParam);
      const Tensor& gy = result.grad();
      if (x.requires_grad()) {
        Tensor g(x.shape());
        const double a = alpha.value()[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = sign * a * gy[i];
        x.accumulate_grad(g);
      }
      if (alpha.requires_grad()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < gy.size(); ++i) acc += gy[i] * x.value()[i];
        alpha.accumulate_grad(Tensor(alpha.shape(), sign * acc));
      }
    });
  }
  return result;
}

Var mul_channel_broadcast(Tape& tape, const Var& x, const Var& mask) {
  const Shape s = x.shape();
  const Shape ms = mask.shape();
  if (ms.c != 1 || ms.n != s.n || ms.h != s.h || ms.w != s.w) {
    throw ShapeError("mask " + ms.str() + " cannot broadcast over " + s.str());
  }
  const std::size_t plane = s.plane();
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    const double* m = mask.value().raw() + mask.value().offset(n, 0, 0, 0);
    for (int c = 0; c < s.c; ++c) {
      const std::size_t off = out.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) out[off + i] = x.value()[off + i] * m[i];
    }
  }
  Var result(std::move(out), tape.wants({&x, &mask}));
  if (result.requires_grad()) {
    tape.record([x, mask, result]() mutable {
      if (!result.has_grad()) return;
      const double sign = sign_of(OpKind::kMulChannelBroadcast);
      const Tensor& gy = result.grad();
      const Shape s = x.shape();
      const std::size_t plane = s.plane();
      Tensor gx(s);
      Tensor gm(mask.shape());
      for (int n = 0; n < s.n; ++n) {
        const double* m = mask.value().raw() + mask.value().offset(n, 0, 0, 0);
        double* gmn = gm.raw() + gm.offset(n, 0, 0, 0);
        for (int c = 0; c < s.c; ++c) {
          const std::size_t off = gy.offset(n, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) {
            gx[off + i] = sign * gy[off + i] * m[i];
            gmn[i] += sign * gy[off + i] * x.value()[off + i];
          }
        }
      }
      if (x.requires_grad()) x.accumulate_grad(gx);
      if (mask.requires_grad()) mask.accumulate_grad(gm);
    });
  }
  return result;
}

Var concat_channels(Tape& tape, std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_channels needs at least one input");
  const Shape first = parts.front().shape();
  int channels = 0;
  for (const Var& p : parts) {
    const Shape s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: non-channel dims differ " +
                       first.str() + " vs " + s.str());
    }
    channels += s.c;
  }
  const Shape os{first.n, channels, first.h, first.w};
  Tensor out(os);
  const std::size_t plane = os.plane();
  int c0 = 0;
  for (const Var& p : parts) {
    const int pc = p.shape().c;
    for (int n = 0; n < os.n; ++n) {
      const double* src = p.value().raw() + p.value().offset(n, 0, 0, 0);
      std::copy(src, src + pc * plane, out.raw() + out.offset(n, c0, 0, 0));
    }
    c0 += pc;
  }
  bool any = false;
  for (const Var& p : parts) any = any || tape.wants({&p});
  Var result(std::move(out), any);
  if (any) {
    std::vector<Var> inputs(parts.begin(), parts.end());
    tape.record([inputs, result]() mutable {
      if (!result.has_grad()) return;
      const double sign = sign_of(OpKind::kConcat);
      const Tensor& gy = result.grad();
      const Shape os = gy.shape();
      const std::size_t plane = os.plane();
      int c0 = 0;
      for (Var& p : inputs) {
        const int pc = p.shape().c;
        if (p.requires_grad()) {
          Tensor g(p.shape());
          for (int n = 0; n < os.n; ++n) {
            const double* src = gy.raw() + gy.offset(n, c0, 0, 0);
            double* dst = g.raw() + g.offset(n, 0, 0, 0);
            for (std::size_t i = 0; i < pc * plane; ++i) dst[i] = sign * src[i];
          }
          p.accumulate_grad(g);
        }
        c0 += pc;
      }
    });
  }
  return result;
}

Var slice_channels(Tape& tape, const Var& x, int begin, int count) {
  const Shape s = x.shape();
  if (begin < 0 || count <= 0 || begin + count > s.c) {
    throw ShapeError("slice_channels range [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") outside " + s.str());
  }
  const Shape os{s.n, count, s.h, s.w};
  const std::size_t plane = s.plane();
  Tensor out(os);
  for (int n = 0; n < s.n; ++n) {
    const double* src = x.value().raw() + x.value().offset(n, begin, 0, 0);
    std::copy(src, src + count * plane, out.raw() + out.offset(n, 0, 0, 0));
  }
  Var result(std::move(out), tape.wants({&x}));
  if (result.requires_grad()) {
    tape.record([x, result, begin, count]() mutable {
      if (!result.has_grad()) return;
      const double sign = sign_of(OpKind::kSlice);
      const Shape s = x.shape();
      const std::size_t plane = s.plane();
      Tensor g(s);
      for (int n = 0; n < s.n; ++n) {
        const double* src = result.grad().raw() + result.grad().offset(n, 0, 0, 0);
        double* dst = g.raw() + g.offset(n, begin, 0, 0);
        for (std::size_t i = 0; i < count * plane; ++i) dst[i] = sign * src[i];
      }
      x.accumulate_grad(g);
    });
  }
  return result;
}

Var upsample_nearest(Tape& tape, const Var& x, int factor) {
  if (factor < 1) throw ShapeError("upsample factor must be a positive integer");
  const Shape s = x.shape();
  const Shape os{s.n, s.c, s.h * factor, s.w * factor};
  Tensor out(os);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < os.h; ++y) {
        const double* src = x.value().raw() + x.value().offset(n, c, y / factor, 0);
        double* dst = out.raw() + out.offset(n, c, y, 0);
        for (int xo = 0; xo < os.w; ++xo) dst[xo] = src[xo / factor];
      }
    }
  }
  Var result(std::move(out), tape.wants({&x}));
  if (result.requires_grad()) {
    tape.record([x, result, factor]() mutable {
      if (!result.has_grad()) return;
      const double sign = sign_of(OpKind::kUpsample);
      const Shape s = x.shape();
      const Tensor& gy = result.grad();
      const Shape os = gy.shape();
      Tensor g(s);
      for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
          for (int y = 0; y < os.h; ++y) {
            const double* src = gy.raw() + gy.offset(n, c, y, 0);
            double* dst = g.raw() + g.offset(n, c, y / factor, 0);
            for (int xo = 0; xo < os.w; ++xo) dst[xo / factor] += sign * src[xo];
          }
        }
      }
      x.accumulate_grad(g);
    });
  }
  return result;
}

Var weighted_sum(Tape& tape, const Var& x, const Tensor& weights) {
  if (!(weights.shape() == x.shape())) {
    throw ShapeError("weighted_sum weights " + weights.shape().str() +
                     " vs input " + x.shape().str());
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += weights[i] * x.value()[i];
  Var result(Tensor::scalar(acc), tape.wants({&x}));
  if (result.requires_grad()) {
    tape.record([x, result, weights]() mutable {
      if (!result.has_grad()) return;
      const double gy = result.grad()[0];
      Tensor g(x.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = gy * weights[i];
      x.accumulate_grad(g);
    });
  }
  return result;
}

}  // namespace spotlight::ops

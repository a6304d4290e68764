#include <cmath>
#include <random>

#include "doctest.h"
#include "spotlight/gradcheck.hpp"
#include "spotlight/ops.hpp"
#include "test_util.hpp"

using namespace spotlight;
using spotlight::testing::random_tensor;
using spotlight::testing::uniform_int;

namespace {
Var leaf(Tensor t) { return Var(std::move(t), false); }
}  // namespace

TEST_CASE("conv2d all-ones counting case") {
  Tape tape(false);
  const auto spec = ConvSpec::square(1, 1, 3, 1, 1, 1, false);
  const Var y = ops::conv2d(tape, leaf(Tensor({1, 1, 3, 3}, 1.0)), spec,
                            leaf(Tensor({1, 1, 3, 3}, 1.0)));
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.value().at(0, 0, 1, 1) == 9.0);
  CHECK(y.value().at(0, 0, 0, 0) == 4.0);
  CHECK(y.value().at(0, 0, 2, 2) == 4.0);
  CHECK(y.value().at(0, 0, 0, 1) == 6.0);
}

TEST_CASE("conv2d identity kernel reproduces input") {
  Tape tape(false);
  Tensor x({1, 1, 5, 5});
  x.at(0, 0, 2, 2) = 1.0;
  Tensor k({1, 1, 3, 3});
  k.at(0, 0, 1, 1) = 1.0;
  const Var y = ops::conv2d(tape, leaf(x), ConvSpec::square(1, 1, 3, 1, 1, 1, false), leaf(k));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.value()[i] == x[i]);
}

TEST_CASE("conv2d dilated 3x3 shape and gradient") {
  std::mt19937_64 rng(11);
  const auto spec = ConvSpec::square(4, 6, 3, 1, 2, 2, true);
  const Tensor x = random_tensor({2, 4, 9, 9}, rng);
  const Tensor w = random_tensor({6, 4, 3, 3}, rng);
  const Tensor b = random_tensor({1, 6, 1, 1}, rng);
  Tape tape(false);
  CHECK(ops::conv2d(tape, leaf(x), spec, leaf(w), leaf(b)).shape() == Shape{2, 6, 9, 9});

  const auto report = grad_check(
      [&](Tape& t, std::span<const Var> in) {
        return ops::conv2d(t, in[0], spec, in[1], in[2]);
      },
      {x, w, b});
  CHECK(report.passed);
  CHECK(report.max_rel_error <= 1e-4);
}

TEST_CASE("conv2d asymmetric kernels keep spatial size with same padding") {
  std::mt19937_64 rng(3);
  for (auto [kh, kw] : {std::pair{1, 9}, std::pair{9, 1}}) {
    const auto spec = ConvSpec::same(2, 3, kh, kw);
    CHECK(spec.pad_left == (kw - 1) / 2);
    CHECK(spec.pad_top == (kh - 1) / 2);
    Tape tape(false);
    const Var y = ops::conv2d(tape, leaf(random_tensor({1, 2, 7, 11}, rng)), spec,
                              leaf(random_tensor({3, 2, kh, kw}, rng)),
                              leaf(random_tensor({1, 3, 1, 1}, rng)));
    CHECK(y.shape() == Shape{1, 3, 7, 11});
  }
}

TEST_CASE("conv2d 1x1 equals per-pixel matrix multiply") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const int ci = uniform_int(rng, 1, 6), co = uniform_int(rng, 1, 6);
    const int h = uniform_int(rng, 1, 7), w = uniform_int(rng, 1, 7);
    const Tensor x = random_tensor({2, ci, h, w}, rng);
    const Tensor k = random_tensor({co, ci, 1, 1}, rng);
    Tape tape(false);
    const Var y = ops::conv2d(tape, leaf(x), ConvSpec::square(ci, co, 1, 1, 1, 0, false), leaf(k));
    for (int n = 0; n < 2; ++n)
      for (int o = 0; o < co; ++o)
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j) {
            double acc = 0.0;
            for (int c = 0; c < ci; ++c) acc += k.at(o, c, 0, 0) * x.at(n, c, i, j);
            CHECK(y.value().at(n, o, i, j) == doctest::Approx(acc).epsilon(1e-12));
          }
  }
}

TEST_CASE("conv2d output shape follows the ConvSpec formula") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    ConvSpec s;
    s.in_channels = uniform_int(rng, 1, 3);
    s.out_channels = uniform_int(rng, 1, 3);
    s.kernel_h = uniform_int(rng, 1, 4);
    s.kernel_w = uniform_int(rng, 1, 4);
    s.stride = uniform_int(rng, 1, 3);
    s.dilation = uniform_int(rng, 1, 3);
    s.pad_top = uniform_int(rng, 0, 3);
    s.pad_bottom = uniform_int(rng, 0, 3);
    s.pad_left = uniform_int(rng, 0, 3);
    s.pad_right = uniform_int(rng, 0, 3);
    const int h = uniform_int(rng, 1, 12), w = uniform_int(rng, 1, 12);
    const int eh = (h + s.pad_top + s.pad_bottom - s.dilation * (s.kernel_h - 1) - 1);
    const int ew = (w + s.pad_left + s.pad_right - s.dilation * (s.kernel_w - 1) - 1);
    Tape tape(false);
    const Var x = leaf(random_tensor({1, s.in_channels, h, w}, rng));
    const Var k = leaf(random_tensor({s.out_channels, s.in_channels, s.kernel_h, s.kernel_w}, rng));
    if (eh < 0 || ew < 0) {
      CHECK_THROWS_AS(ops::conv2d(tape, x, s, k), ShapeError);
    } else {
      const Var y = ops::conv2d(tape, x, s, k);
      CHECK(y.shape().h == eh / s.stride + 1);
      CHECK(y.shape().w == ew / s.stride + 1);
    }
  }
}

TEST_CASE("conv2d rejects mismatched weights") {
  Tape tape(false);
  CHECK_THROWS_AS(ops::conv2d(tape, leaf(Tensor({1, 2, 4, 4})), ConvSpec::square(2, 3, 3),
                              leaf(Tensor({3, 1, 3, 3}))),
                  ShapeError);
  CHECK_THROWS_AS(ops::conv2d(tape, leaf(Tensor({1, 3, 4, 4})), ConvSpec::square(2, 3, 3),
                              leaf(Tensor({3, 2, 3, 3}))),
                  ShapeError);
}

TEST_CASE("conv_transpose2d block fill and doubling") {
  Tape tape(false);
  auto spec = ConvSpec::square(1, 1, 2, 2, 1, 0, false);
  const Var y = ops::conv_transpose2d(tape, leaf(Tensor({1, 1, 2, 2}, {1, 2, 3, 4})), spec,
                                      leaf(Tensor({1, 1, 2, 2}, 1.0)));
  REQUIRE(y.shape() == Shape{1, 1, 4, 4});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(y.value().at(0, 0, i, j) == 1 + (i / 2) * 2 + (j / 2));

  auto wide = ConvSpec::square(2, 3, 2, 2, 1, 0, true);
  const Var big = ops::conv_transpose2d(tape, leaf(Tensor({1, 2, 160, 160}, 0.1)), wide,
                                        leaf(Tensor({2, 3, 2, 2}, 0.5)),
                                        leaf(Tensor({1, 3, 1, 1})));
  CHECK(big.shape() == Shape{1, 3, 320, 320});
}

TEST_CASE("convolutions match direct loops at training-scale sizes") {
  // Large column buffers exercise different GEMM kernels than the tiny cases.
  std::mt19937_64 rng(37);
  Tape tape(false);
  const Tensor x = random_tensor({1, 4, 64, 64}, rng);
  const Tensor wt = random_tensor({4, 32, 2, 2}, rng);
  const Var up = ops::conv_transpose2d(tape, leaf(x), ConvSpec::square(4, 32, 2, 2, 1, 0, false),
                                       leaf(wt));
  double worst = 0.0;
  for (int o = 0; o < 32; ++o) {
    for (int y = 0; y < 128; ++y) {
      for (int xx = 0; xx < 128; ++xx) {
        double ref = 0.0;
        for (int i = 0; i < 4; ++i) ref += wt.at(i, o, y % 2, xx % 2) * x.at(0, i, y / 2, xx / 2);
        worst = std::max(worst, std::abs(ref - up.value().at(0, o, y, xx)));
      }
    }
  }
  CHECK(worst < 1e-12);

  const Tensor img = random_tensor({1, 16, 72, 72}, rng);
  const Tensor wc = random_tensor({24, 16, 3, 3}, rng);
  const Var conv = ops::conv2d(tape, leaf(img), ConvSpec::square(16, 24, 3, 1, 2, 2, false),
                               leaf(wc));
  worst = 0.0;
  for (int o = 0; o < 24; ++o) {
    for (int y = 0; y < 72; ++y) {
      for (int xx = 0; xx < 72; ++xx) {
        double ref = 0.0;
        for (int i = 0; i < 16; ++i) {
          for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) {
              const int iy = y - 2 + 2 * a, ix = xx - 2 + 2 * b;
              if (iy >= 0 && iy < 72 && ix >= 0 && ix < 72) ref += wc.at(o, i, a, b) * img.at(0, i, iy, ix);
            }
          }
        }
        worst = std::max(worst, std::abs(ref - conv.value().at(0, o, y, xx)));
      }
    }
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("conv_transpose2d gradient") {
  std::mt19937_64 rng(23);
  for (int stride : {1, 2, 3}) {
    auto spec = ConvSpec::square(3, 2, stride == 1 ? 3 : 2, stride, 1, stride == 1 ? 1 : 0, true);
    const Tensor x = random_tensor({2, 3, 4, 5}, rng);
    const Tensor w = random_tensor({3, 2, spec.kernel_h, spec.kernel_w}, rng);
    const Tensor b = random_tensor({1, 2, 1, 1}, rng);
    const auto report = grad_check(
        [&](Tape& t, std::span<const Var> in) {
          return ops::conv_transpose2d(t, in[0], spec, in[1], in[2]);
        },
        {x, w, b});
    CHECK_MESSAGE(report.passed, "stride " << stride << " err " << report.max_rel_error);
  }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  // <conv(x), y> == <x, convt(y)> for shared weights laid out transposed.
  std::mt19937_64 rng(29);
  const auto spec = ConvSpec::square(3, 4, 3, 2, 1, 1, false);
  const Tensor x = random_tensor({1, 3, 9, 9}, rng);
  const Tensor w = random_tensor({4, 3, 3, 3}, rng);
  Tape tape(false);
  const Var cx = ops::conv2d(tape, leaf(x), spec, leaf(w));
  const Tensor y = random_tensor(cx.shape(), rng);
  ConvSpec tspec = spec;
  std::swap(tspec.in_channels, tspec.out_channels);
  // conv weights (out=4, in=3) read as transposed weights (in=4, out=3).
  const Var ty = ops::conv_transpose2d(tape, leaf(y), tspec, leaf(w));
  REQUIRE(ty.shape() == x.shape());
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += cx.value()[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * ty.value()[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("batch_norm eval identity and train statistics") {
  std::mt19937_64 rng(31);
  const Tensor x = random_tensor({3, 4, 5, 5}, rng, -3.0, 5.0);
  Tape tape(false);
  auto stats = ops::RunningStats::identity(4);
  const Var ident = ops::batch_norm(tape, leaf(x), leaf(Tensor({1, 4, 1, 1}, 1.0)),
                                    leaf(Tensor({1, 4, 1, 1})), stats, ops::Mode::kEval);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(ident.value()[i] == doctest::Approx(x[i] / std::sqrt(1.0 + 1e-5)).epsilon(1e-14));

  Tensor gamma({1, 4, 1, 1}, {0.5, 1.0, 2.0, 3.0});
  Tensor beta({1, 4, 1, 1}, {-1.0, 0.0, 1.0, 2.0});
  const Var y = ops::batch_norm(tape, leaf(x), leaf(gamma), leaf(beta), stats, ops::Mode::kTrain,
                                0.1, 0.0);
  for (int c = 0; c < 4; ++c) {
    double mean = 0.0, sq = 0.0;
    const int count = 3 * 25;
    for (int n = 0; n < 3; ++n)
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) mean += y.value().at(n, c, i, j);
    mean /= count;
    for (int n = 0; n < 3; ++n)
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) sq += std::pow(y.value().at(n, c, i, j) - mean, 2);
    CHECK(mean == doctest::Approx(beta[c]).epsilon(1e-6));
    CHECK(std::sqrt(sq / count) == doctest::Approx(gamma[c]).epsilon(1e-6));
  }
  // Running stats moved toward the batch statistics.
  CHECK(stats.mean[0] != 0.0);
}

TEST_CASE("batch_norm gradients in both modes") {
  std::mt19937_64 rng(37);
  const Tensor x = random_tensor({2, 3, 4, 4}, rng);
  const Tensor g = random_tensor({1, 3, 1, 1}, rng, 0.5, 1.5);
  const Tensor b = random_tensor({1, 3, 1, 1}, rng);
  for (auto mode : {ops::Mode::kTrain, ops::Mode::kEval}) {
    auto base = ops::RunningStats::identity(3);
    base.mean = random_tensor({1, 3, 1, 1}, rng);
    base.var = random_tensor({1, 3, 1, 1}, rng, 0.5, 2.0);
    const auto report = grad_check(
        [&](Tape& t, std::span<const Var> in) {
          auto stats = base;
          return ops::batch_norm(t, in[0], in[1], in[2], stats, mode);
        },
        {x, g, b});
    CHECK(report.passed);
  }
}

TEST_CASE("batch_norm train mode needs elements") {
  Tape tape(false);
  auto stats = ops::RunningStats::identity(2);
  CHECK_THROWS_AS(ops::batch_norm(tape, leaf(Tensor({0, 2, 3, 3})), leaf(Tensor({1, 2, 1, 1}, 1.0)),
                                  leaf(Tensor({1, 2, 1, 1})), stats, ops::Mode::kTrain),
                  ShapeError);
}

TEST_CASE("pointwise ops") {
  Tape tape(false);
  CHECK(ops::sigmoid(tape, leaf(Tensor::scalar(0.0))).value()[0] == 0.5);
  const Var cat = ops::concat_channels(
      tape, std::vector<Var>{leaf(Tensor({1, 4, 8, 8})), leaf(Tensor({1, 12, 8, 8}))});
  CHECK(cat.shape() == Shape{1, 16, 8, 8});
  CHECK_THROWS_AS(ops::concat_channels(tape, std::vector<Var>{leaf(Tensor({1, 4, 8, 8})),
                                                            leaf(Tensor({1, 4, 8, 7}))}),
                  ShapeError);
  CHECK_THROWS_AS(ops::add(tape, leaf(Tensor({1, 1, 2, 2})), leaf(Tensor({1, 1, 2, 3}))),
                  ShapeError);
  const Var up = ops::upsample_nearest(tape, leaf(Tensor({1, 1, 2, 2}, {1, 2, 3, 4})), 3);
  CHECK(up.shape() == Shape{1, 1, 6, 6});
  CHECK(up.value().at(0, 0, 5, 0) == 3.0);
  CHECK(ops::relu(tape, leaf(Tensor({1, 1, 1, 2}, {-1.0, 2.0}))).value()[0] == 0.0);
}

TEST_CASE("mul_scalar_param with alpha -1") {
  std::mt19937_64 rng(41);
  const Tensor t = random_tensor({1, 3, 4, 4}, rng);
  Tape tape(true);
  Var x(t, false);
  Var alpha(Tensor::scalar(-1.0), true);
  const Var y = ops::mul_scalar_param(tape, x, alpha);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(y.value()[i] == -t[i]);
  tape.backward(ops::weighted_sum(tape, y, Tensor(t.shape(), 1.0)));
  CHECK(alpha.grad()[0] == doctest::Approx(t.sum()).epsilon(1e-12));
}

TEST_CASE("grad_check on sigmoid meets 1e-6") {
  std::mt19937_64 rng(43);
  const auto report = grad_check(
      [](Tape& t, std::span<const Var> in) { return ops::sigmoid(t, in[0]); },
      {random_tensor({1, 2, 3, 3}, rng, -3.0, 3.0)}, {.tolerance = 1e-6});
  CHECK(report.max_rel_error <= 1e-6);
}

TEST_CASE("grad_check on elementwise and layout ops") {
  std::mt19937_64 rng(47);
  const Tensor a = random_tensor({2, 4, 3, 3}, rng);
  const Tensor b = random_tensor({2, 4, 3, 3}, rng);
  const Tensor m = random_tensor({2, 1, 3, 3}, rng);
  auto check = [](const GradFn& f, const std::vector<Tensor>& in) {
    const auto r = grad_check(f, in);
    CHECK_MESSAGE(r.passed, "err " << r.max_rel_error);
  };
  check([](Tape& t, std::span<const Var> in) { return ops::add(t, in[0], in[1]); }, {a, b});
  check([](Tape& t, std::span<const Var> in) { return ops::mul(t, in[0], in[1]); }, {a, b});
  check([](Tape& t, std::span<const Var> in) { return ops::scale(t, in[0], -2.5); }, {a});
  check([](Tape& t, std::span<const Var> in) { return ops::relu(t, in[0]); }, {a});
  check([](Tape& t, std::span<const Var> in) { return ops::mul_channel_broadcast(t, in[0], in[1]); },
        {a, m});
  check([](Tape& t, std::span<const Var> in) {
          return ops::mul_scalar_param(t, in[0], in[1]);
        },
        {a, Tensor::scalar(-0.7)});
  check([](Tape& t, std::span<const Var> in) { return ops::concat_channels(t, in); }, {a, b, m});
  check([](Tape& t, std::span<const Var> in) { return ops::slice_channels(t, in[0], 1, 2); }, {a});
  check([](Tape& t, std::span<const Var> in) { return ops::upsample_nearest(t, in[0], 2); }, {a});
}

TEST_CASE("grad_check rejects nondeterministic functions") {
  int calls = 0;
  CHECK_THROWS_AS(grad_check(
                      [&](Tape& t, std::span<const Var> in) {
                        return ops::scale(t, in[0], 1.0 + (++calls) * 1e-3);
                      },
                      {Tensor::scalar(1.0)}),
                  NondeterministicOpError);
}

TEST_CASE("sign-flip fault is detected by grad_check") {
  std::mt19937_64 rng(53);
  const auto spec = ConvSpec::square(2, 2, 3, 1, 1, 1, false);
  const std::vector<Tensor> in{random_tensor({1, 2, 5, 5}, rng), random_tensor({2, 2, 3, 3}, rng)};
  const GradFn f = [&](Tape& t, std::span<const Var> v) { return ops::conv2d(t, v[0], spec, v[1]); };
  CHECK(grad_check(f, in).passed);
  fault::Guard guard(OpKind::kConv2d);
  CHECK_FALSE(grad_check(f, in).passed);
}

TEST_CASE("conv forward is bit-identical across runs") {
  std::mt19937_64 rng(59);
  const Tensor x = random_tensor({1, 8, 16, 16}, rng);
  const Tensor w = random_tensor({8, 8, 3, 3}, rng);
  const auto spec = ConvSpec::square(8, 8, 3, 1, 3, 3, false);
  Tape tape(false);
  const Var a = ops::conv2d(tape, leaf(x), spec, leaf(w));
  const Var b = ops::conv2d(tape, leaf(x), spec, leaf(w));
  for (std::size_t i = 0; i < a.value().size(); ++i) CHECK(a.value()[i] == b.value()[i]);
}

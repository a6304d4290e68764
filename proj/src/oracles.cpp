#include "spotlight/oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "spotlight/eval.hpp"
#include "spotlight/geometry.hpp"
#include "spotlight/gradcheck.hpp"
#include "spotlight/labels.hpp"
#include "spotlight/losses.hpp"
#include "spotlight/model.hpp"
#include "spotlight/ops.hpp"
#include "spotlight/postprocess.hpp"

namespace spotlight::oracles {
namespace {

using Rng64 = std::mt19937_64;

int pick(Rng64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Tensor uniform(Shape s, Rng64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(s);
  for (double& v : t.data()) v = d(rng);
  return t;
}

// Values bounded away from zero so kinks stay out of the finite-difference stencil.
Tensor away_from_zero(Shape s, Rng64& rng) {
  Tensor t = uniform(s, rng);
  for (double& v : t.data()) v = v < 0 ? v - 0.05 : v + 0.05;
  return t;
}

Tensor binary(Shape s, Rng64& rng, double p) {
  std::bernoulli_distribution b(p);
  Tensor t(s);
  for (double& v : t.data()) v = b(rng) ? 1.0 : 0.0;
  return t;
}

struct Trial {
  GradFn fn;
  std::vector<Tensor> inputs;
};

using TrialMaker = std::function<Trial(Rng64&)>;

struct OpCase {
  std::string name;
  TrialMaker make;
};

Trial conv_trial(Rng64& rng, int kh, int kw, int dilation) {
  const int cin = pick(rng, 1, 3), cout = pick(rng, 1, 3), n = pick(rng, 1, 2);
  const int stride = pick(rng, 1, 2);
  ConvSpec spec = ConvSpec::same(cin, cout, kh, kw, dilation, true);
  spec.stride = stride;
  const int min_h = kh == 1 ? 2 : 3, min_w = kw == 1 ? 2 : 3;
  const Shape xs{n, cin, pick(rng, min_h, min_h + 5), pick(rng, min_w, min_w + 5)};
  return {[spec](Tape& t, std::span<const Var> in) { return ops::conv2d(t, in[0], spec, in[1], in[2]); },
          {uniform(xs, rng), uniform({cout, cin, kh, kw}, rng), uniform({1, cout, 1, 1}, rng)}};
}

std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  for (int d = 1; d <= 4; ++d) {
    cases.push_back({"conv2d 3x3 dilation " + std::to_string(d),
                     [d](Rng64& rng) { return conv_trial(rng, 3, 3, d); }});
  }
  cases.push_back({"conv2d 1x9", [](Rng64& rng) { return conv_trial(rng, 1, 9, 1); }});
  cases.push_back({"conv2d 9x1", [](Rng64& rng) { return conv_trial(rng, 9, 1, 1); }});
  cases.push_back({"conv_transpose2d", [](Rng64& rng) {
                     const int cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
                     const int stride = pick(rng, 1, 3), k = pick(rng, 2, 3);
                     const int pad = pick(rng, 0, k - 1);
                     const ConvSpec spec = ConvSpec::square(cin, cout, k, stride, 1, pad, true);
                     const Shape xs{pick(rng, 1, 2), cin, pick(rng, 2, 5), pick(rng, 2, 5)};
                     return Trial{[spec](Tape& t, std::span<const Var> in) {
                                    return ops::conv_transpose2d(t, in[0], spec, in[1], in[2]);
                                  },
                                  {uniform(xs, rng), uniform({cin, cout, k, k}, rng),
                                   uniform({1, cout, 1, 1}, rng)}};
                   }});
  for (const auto mode : {ops::Mode::kTrain, ops::Mode::kEval}) {
    cases.push_back({mode == ops::Mode::kTrain ? "batch_norm train" : "batch_norm eval",
                     [mode](Rng64& rng) {
                       const int c = pick(rng, 1, 3);
                       const Shape xs{pick(rng, 1, 3), c, pick(rng, 2, 4), pick(rng, 2, 4)};
                       auto stats = ops::RunningStats::identity(c);
                       stats.mean = uniform({1, c, 1, 1}, rng);
                       stats.var = uniform({1, c, 1, 1}, rng, 0.5, 2.0);
                       return Trial{[mode, stats](Tape& t, std::span<const Var> in) {
                                      auto local = stats;
                                      return ops::batch_norm(t, in[0], in[1], in[2], local, mode);
                                    },
                                    {uniform(xs, rng), uniform({1, c, 1, 1}, rng, 0.5, 1.5),
                                     uniform({1, c, 1, 1}, rng)}};
                     }});
  }
  const auto small_shape = [](Rng64& rng) {
    return Shape{pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, 5), pick(rng, 1, 5)};
  };
  cases.push_back({"relu", [=](Rng64& rng) {
                     return Trial{[](Tape& t, std::span<const Var> in) { return ops::relu(t, in[0]); },
                                  {away_from_zero(small_shape(rng), rng)}};
                   }});
  cases.push_back({"sigmoid", [=](Rng64& rng) {
                     return Trial{[](Tape& t, std::span<const Var> in) { return ops::sigmoid(t, in[0]); },
                                  {uniform(small_shape(rng), rng, -4.0, 4.0)}};
                   }});
  cases.push_back({"add", [=](Rng64& rng) {
                     const Shape s = small_shape(rng);
                     return Trial{[](Tape& t, std::span<const Var> in) { return ops::add(t, in[0], in[1]); },
                                  {uniform(s, rng), uniform(s, rng)}};
                   }});
  cases.push_back({"mul", [=](Rng64& rng) {
                     const Shape s = small_shape(rng);
                     return Trial{[](Tape& t, std::span<const Var> in) { return ops::mul(t, in[0], in[1]); },
                                  {uniform(s, rng), uniform(s, rng)}};
                   }});
  cases.push_back({"scale", [=](Rng64& rng) {
                     const double f = std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
                     return Trial{[f](Tape& t, std::span<const Var> in) { return ops::scale(t, in[0], f); },
                                  {uniform(small_shape(rng), rng)}};
                   }});
  cases.push_back({"alpha multiply", [=](Rng64& rng) {
                     return Trial{[](Tape& t, std::span<const Var> in) {
                                    return ops::mul_scalar_param(t, in[0], in[1]);
                                  },
                                  {uniform(small_shape(rng), rng), uniform({1, 1, 1, 1}, rng, -1.5, 0.5)}};
                   }});
  cases.push_back({"mul_channel_broadcast", [=](Rng64& rng) {
                     const Shape s = small_shape(rng);
                     return Trial{[](Tape& t, std::span<const Var> in) {
                                    return ops::mul_channel_broadcast(t, in[0], in[1]);
                                  },
                                  {uniform(s, rng), uniform({s.n, 1, s.h, s.w}, rng)}};
                   }});
  cases.push_back({"concat_channels", [=](Rng64& rng) {
                     const Shape s = small_shape(rng);
                     std::vector<Tensor> parts;
                     const int count = pick(rng, 2, 3);
                     for (int i = 0; i < count; ++i) parts.push_back(uniform({s.n, pick(rng, 1, 3), s.h, s.w}, rng));
                     return Trial{[](Tape& t, std::span<const Var> in) { return ops::concat_channels(t, in); },
                                  parts};
                   }});
  cases.push_back({"slice_channels", [=](Rng64& rng) {
                     Shape s = small_shape(rng);
                     s.c = pick(rng, 2, 5);
                     const int begin = pick(rng, 0, s.c - 1);
                     const int count = pick(rng, 1, s.c - begin);
                     return Trial{[begin, count](Tape& t, std::span<const Var> in) {
                                    return ops::slice_channels(t, in[0], begin, count);
                                  },
                                  {uniform(s, rng)}};
                   }});
  cases.push_back({"upsample_nearest", [=](Rng64& rng) {
                     const int f = pick(rng, 2, 4);
                     return Trial{[f](Tape& t, std::span<const Var> in) {
                                    return ops::upsample_nearest(t, in[0], f);
                                  },
                                  {uniform(small_shape(rng), rng)}};
                   }});
  cases.push_back({"dice_loss", [](Rng64& rng) {
                     const Shape s{pick(rng, 1, 2), 1, pick(rng, 2, 7), pick(rng, 2, 7)};
                     const Tensor y = binary(s, rng, 0.4), ignore = binary(s, rng, 0.1);
                     return Trial{[y, ignore](Tape& t, std::span<const Var> in) {
                                    return dice_loss(t, in[0], y, ignore);
                                  },
                                  {uniform(s, rng, 0.02, 0.98)}};
                   }});
  cases.push_back({"bce_ohem", [](Rng64& rng) {
                     // Distinct, well separated negative scores keep the hard
                     // negative set fixed under the finite-difference step.
                     const Shape s{1, 1, pick(rng, 3, 6), pick(rng, 3, 6)};
                     Tensor y = binary(s, rng, 0.3);
                     y[0] = 1.0;
                     const Tensor ignore(s);
                     Tensor pred = uniform(s, rng, 0.2, 0.8);
                     std::vector<std::size_t> neg;
                     for (std::size_t i = 0; i < y.size(); ++i) {
                       if (y[i] == 0.0) neg.push_back(i);
                     }
                     std::shuffle(neg.begin(), neg.end(), rng);
                     const double gap = 0.9 / static_cast<double>(neg.size() + 1);
                     for (std::size_t k = 0; k < neg.size(); ++k) pred[neg[k]] = 0.05 + gap * k;
                     const double ratio = pick(rng, 1, 3);
                     return Trial{[y, ignore, ratio](Tape& t, std::span<const Var> in) {
                                    return bce_ohem(t, in[0], y, ignore, ratio);
                                  },
                                  {pred}};
                   }});
  return cases;
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), pattern, a, b, c);
  return buf;
}

}  // namespace

CheckResult timed(const std::string& name, const std::function<CheckResult()>& fn) {
  const auto start = std::chrono::steady_clock::now();
  CheckResult r = fn();
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::vector<OpGradResult> gradient_suite(const GradSuiteOptions& opts) {
  std::vector<OpGradResult> out;
  Rng64 rng(opts.seed);
  GradCheckOptions gc;
  gc.tolerance = opts.tolerance;
  for (const OpCase& op : op_cases()) {
    OpGradResult r;
    r.op = op.name;
    for (int i = 0; i < opts.shapes_per_op; ++i) {
      const Trial trial = op.make(rng);
      const GradCheckReport rep = grad_check(trial.fn, trial.inputs, gc);
      ++r.trials;
      r.passed += rep.passed;
      r.worst = std::max(r.worst, rep.max_rel_error);
      if (!rep.passed && opts.stop_on_failure) {
        out.push_back(r);
        return out;
      }
    }
    out.push_back(r);
  }
  return out;
}

CheckResult check_gradients(const GradSuiteOptions& opts) {
  CheckResult res;
  const auto ops = gradient_suite(opts);
  bool ok = true;
  double worst = 0.0;
  std::string failing;
  int trials = 0;
  for (const auto& r : ops) {
    trials += r.trials;
    worst = std::max(worst, r.worst);
    if (r.passed != r.trials) {
      ok = false;
      failing += (failing.empty() ? "" : ", ") + r.op;
    }
  }
  res.passed = ok;
  res.detail = std::to_string(ops.size()) + " operators, " + std::to_string(trials) +
               " trials, worst relative error " + fmt("%.2e", worst);
  if (!ok) res.detail += "; failing: " + failing;
  return res;
}

CheckResult check_shape_contracts(int trials, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.base_channels = 16;
  StdModel model(cfg);
  Rng64 rng(seed);
  int ok = 0;
  std::string first_bad;
  for (int i = 0; i < trials; ++i) {
    const int h = 32 * pick(rng, 2, 10), w = 32 * pick(rng, 2, 10);
    Tape tape(false);
    const ForwardResult r = model.forward(tape, Var(uniform({1, 3, h, w}, rng)), ops::Mode::kEval);
    const bool good = r.m_cs.shape() == Shape{1, 1, h / 4, w / 4} && r.m_rs.shape() == Shape{1, 1, h, w};
    ok += good;
    if (!good && first_bad.empty()) first_bad = std::to_string(h) + "x" + std::to_string(w);
  }
  CheckResult res;
  res.passed = ok == trials;
  res.detail = std::to_string(ok) + "/" + std::to_string(trials) + " random sizes";
  if (!first_bad.empty()) res.detail += "; first failure at " + first_bad;
  return res;
}

CheckResult check_miem_macs() {
  CheckResult res;
  res.passed = true;
  for (int c : {8, 16, 32, 64, 128}) {
    ParamStore store;
    Rng rng(c);
    const Miem miem(store, "m", c, rng);
    CostTally tally;
    Tape tape(false);
    tape.set_cost_tally(&tally);
    const int h = 5, w = 7;
    miem(tape, Var(Tensor({1, c, h, w}, 0.5)), ops::Mode::kEval);
    const std::int64_t macs = tally.macs.at("branches");
    // 2.25 C^2 per pixel, kept in integers: 4 * macs == 9 * C^2 * pixels.
    const bool exact = 4 * macs == 9LL * c * c * h * w;
    res.passed = res.passed && exact;
    res.detail += (res.detail.empty() ? "" : ", ") + std::string("C=") + std::to_string(c) + ": " +
                  fmt("%.4g", static_cast<double>(macs) / (h * w)) + " MAC/px";
  }
  return res;
}

CheckResult check_cpfsm_receptive_field() {
  constexpr int kC = 64, kSide = 33, kCentre = 16, kRadius = 1 + 2 + 3 + 4;
  ParamStore store;
  Rng rng(17);
  const Cpfsm cpfsm(store, kC, kC, rng);

  // Gradient support of single output pixels, centre and border ones.
  int leaks = 0, centre_radius = -1;
  const std::pair<int, int> probes[] = {{kCentre, kCentre}, {0, 0}, {5, 29}, {32, 16}, {20, 3}};
  for (const auto& [py, px] : probes) {
    Tape tape(true);
    Tensor impulse({1, kC, kSide, kSide});
    for (int c = 0; c < kC; ++c) impulse.at(0, c, kCentre, kCentre) = 1.0;
    const Var x(impulse, true);
    const Var y = cpfsm(tape, x);
    Tensor select(y.shape());
    for (int c = 0; c < kC; ++c) select.at(0, c, py, px) = 1.0;
    tape.backward(ops::weighted_sum(tape, y, select));
    int radius = 0;
    for (int c = 0; c < kC; ++c) {
      for (int yy = 0; yy < kSide; ++yy) {
        for (int xx = 0; xx < kSide; ++xx) {
          if (x.grad().at(0, c, yy, xx) == 0.0) continue;
          const int r = std::max(std::abs(yy - py), std::abs(xx - px));
          radius = std::max(radius, r);
          leaks += r > kRadius;
        }
      }
    }
    if (py == kCentre && px == kCentre) centre_radius = radius;
  }

  // Forward impulse response: output differs from the zero-input response
  // only within the radius.
  Tape tape(false);
  Tensor impulse({1, kC, kSide, kSide});
  for (int c = 0; c < kC; ++c) impulse.at(0, c, kCentre, kCentre) = 1.0;
  const Tensor base = cpfsm(tape, Var(Tensor({1, kC, kSide, kSide}))).value();
  const Tensor hit = cpfsm(tape, Var(impulse)).value();
  int forward_leaks = 0, forward_radius = 0;
  for (int c = 0; c < kC; ++c) {
    for (int yy = 0; yy < kSide; ++yy) {
      for (int xx = 0; xx < kSide; ++xx) {
        if (hit.at(0, c, yy, xx) == base.at(0, c, yy, xx)) continue;
        const int r = std::max(std::abs(yy - kCentre), std::abs(xx - kCentre));
        forward_radius = std::max(forward_radius, r);
        forward_leaks += r > kRadius;
      }
    }
  }
  CheckResult res;
  res.passed = leaks == 0 && forward_leaks == 0 && centre_radius == kRadius &&
               forward_radius == kRadius;
  res.detail = "closed-form radius " + std::to_string(kRadius) + ", measured " +
               std::to_string(centre_radius) + " (gradient) / " + std::to_string(forward_radius) +
               " (impulse), leaked pixels " + std::to_string(leaks + forward_leaks);
  return res;
}

RoundTripStats geometry_round_trip(int count, std::uint64_t seed, double gamma, double beta) {
  Rng64 rng(seed);
  std::uniform_real_distribution<double> side(16.0, 128.0), aspect(1.0, 10.0), shift(0.0, 8.0);
  RoundTripStats stats;
  for (int i = 0; i < count; ++i) {
    const double s = std::round(side(rng));
    const double l = std::round(s * aspect(rng));
    const bool wide = rng() % 2 == 0;
    const double w = wide ? l : s, h = wide ? s : l;
    const double x0 = std::round(shift(rng)), y0 = std::round(shift(rng));
    const Polygon rect = Polygon::rectangle(x0, y0, x0 + w, y0 + h);
    const auto kernels = offset_polygon(rect, -shrink_distance(rect, gamma));
    ++stats.total;
    if (kernels.size() != 1) {
      stats.worst_iou = 0.0;
      continue;
    }
    const Polygon back = expand_kernel(kernels.front(), beta);
    const double iou = polygon_iou(rect, back);
    stats.worst_iou = std::min(stats.worst_iou, iou);
    stats.polygon_pass += iou >= 0.8;
    // Brute-force oracle: rasterize both at 4x resolution on a canvas with
    // room for the growth.
    constexpr double kScale = 4.0;
    const auto place = [&](Polygon p) {
      for (Point& v : p.vertices) v = {(v.x + s) * kScale, (v.y + s) * kScale};
      return p;
    };
    const int cw = static_cast<int>((x0 + w + 2 * s + 8) * kScale);
    const int ch = static_cast<int>((y0 + h + 2 * s + 8) * kScale);
    const Polygon big_rect = place(rect), big_back = place(back);
    const BinaryMask a = rasterize(std::span<const Polygon>(&big_rect, 1), ch, cw);
    const BinaryMask b = rasterize(std::span<const Polygon>(&big_back, 1), ch, cw);
    const double raster = mask_iou(a, b);
    stats.raster_pass += raster >= 0.8;
    stats.max_disagreement = std::max(stats.max_disagreement, std::abs(raster - iou));
  }
  return stats;
}

const std::vector<PrfTriple>& published_triples() {
  static const std::vector<PrfTriple> rows = {
      {87.9, 77.2, 82.2, true}, {84.5, 78.1, 81.2, true}, {86.0, 81.6, 83.7, true},
      {86.6, 82.0, 84.2, true}, {89.2, 80.6, 84.7, true}, {88.7, 80.5, 84.4, true},
      {87.1, 82.5, 84.7, true}, {87.3, 82.3, 84.7, true}, {88.9, 85.2, 87.0, true},
      {90.7, 83.9, 87.2, true}, {82.3, 76.6, 79.4, false}, {86.7, 79.9, 83.1, false},
      {81.4, 81.7, 81.6, false}, {85.4, 80.6, 83.0, false},
  };
  return rows;
}

CheckResult check_metric_triples(int required) {
  int within = 0;
  double worst = 0.0;
  for (const PrfTriple& t : published_triples()) {
    const double gap = std::abs(100.0 * f_measure(t.p / 100.0, t.r / 100.0) - t.f);
    within += gap <= 0.05 + 1e-9;
    worst = std::max(worst, gap);
  }
  CheckResult res;
  res.passed = within >= required;
  res.detail = std::to_string(within) + "/" + std::to_string(published_triples().size()) +
               " triples within 0.05 (need " + std::to_string(required) + "), largest gap " +
               fmt("%.3f", worst);
  return res;
}

CheckResult check_mutation_sensitivity(const GradSuiteOptions& opts) {
  GradSuiteOptions mutated = opts;
  mutated.stop_on_failure = true;
  std::string missed;
  int caught = 0;
  const int kinds = static_cast<int>(OpKind::kCount);
  for (int k = 0; k < kinds; ++k) {
    const auto kind = static_cast<OpKind>(k);
    fault::Guard guard(kind);
    const auto results = gradient_suite(mutated);
    const bool failed = std::any_of(results.begin(), results.end(),
                                    [](const OpGradResult& r) { return r.passed != r.trials; });
    if (failed) {
      ++caught;
    } else {
      missed += (missed.empty() ? "" : ", ") + std::string(op_name(kind));
    }
  }
  CheckResult res;
  res.passed = caught == kinds;
  res.detail = std::to_string(caught) + "/" + std::to_string(kinds) + " sign flips caught";
  if (!missed.empty()) res.detail += "; missed: " + missed;
  return res;
}

std::vector<CheckResult> verify_suite() {
  std::vector<CheckResult> out;
  out.push_back(timed("gradient checks", [] { return check_gradients(); }));
  out.push_back(timed("shape contracts", [] { return check_shape_contracts(20); }));
  out.push_back(timed("MIEM MAC accounting", [] { return check_miem_macs(); }));
  out.push_back(timed("CPFSM receptive field", [] { return check_cpfsm_receptive_field(); }));
  out.push_back(timed("geometry round trip vs raster oracle", [] {
    const RoundTripStats s = geometry_round_trip(200);
    CheckResult r;
    r.passed = s.max_disagreement <= 0.02;
    r.detail = "largest IoU disagreement " + fmt("%.4f", s.max_disagreement) + " over " +
               std::to_string(s.total) + " rectangles";
    return r;
  }));
  out.push_back(timed("metric arithmetic", [] { return check_metric_triples(); }));
  out.push_back(timed("conv2d sign flip is caught", [] {
    fault::Guard guard(OpKind::kConv2d);
    GradSuiteOptions o;
    o.shapes_per_op = 2;
    o.stop_on_failure = true;
    const auto results = gradient_suite(o);
    CheckResult r;
    r.passed = results.back().passed != results.back().trials;
    r.detail = "failed at " + results.back().op;
    return r;
  }));
  return out;
}

}  // namespace spotlight::oracles

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "spotlight/autograd.hpp"

// Built-in self-checks shared by `spotlight verify` and the acceptance binary.
namespace spotlight::oracles {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct GradSuiteOptions {
  int shapes_per_op = 20;
  std::uint64_t seed = 1;
  double tolerance = 1e-4;
  /// Stop at the first failing trial. Used by the mutation check.
  bool stop_on_failure = false;
};

struct OpGradResult {
  std::string op;
  int trials = 0;
  int passed = 0;
  double worst = 0.0;
};

/// Finite-difference gradient checks of every differentiable operator, each
/// over `shapes_per_op` random shapes.
std::vector<OpGradResult> gradient_suite(const GradSuiteOptions& opts = {});
CheckResult check_gradients(const GradSuiteOptions& opts = {});

/// Random (H, W) multiples of 32 in [64, 320]; coarse map at (H/4, W/4),
/// refined at (H, W).
CheckResult check_shape_contracts(int trials = 100, std::uint64_t seed = 2);

/// MIEM branch MACs per pixel equal 2.25 C^2 exactly.
CheckResult check_miem_macs();

/// CPFSM gradient and impulse support stays within radius 1+2+3+4.
CheckResult check_cpfsm_receptive_field();

struct RoundTripStats {
  int total = 0;
  int polygon_pass = 0;  // IoU >= 0.8 through polygon clipping
  int raster_pass = 0;   // IoU >= 0.8 on rasterized masks
  double worst_iou = 1.0;
  double max_disagreement = 0.0;  // largest |clipping IoU - raster IoU|
};

/// Shrink with gamma then expand with beta on random axis-aligned rectangles
/// (aspect 1 to 10, short side 16 to 128).
RoundTripStats geometry_round_trip(int count = 500, std::uint64_t seed = 5, double gamma = 0.4,
                                   double beta = 1.5);

/// Published (P, R, F) rows for the detector; `reproduced` says whether the
/// row is expected to match within 0.05 points.
struct PrfTriple {
  double p, r, f;
  bool reproduced;
};
const std::vector<PrfTriple>& published_triples();
CheckResult check_metric_triples(int required = 10);

/// Arms a sign flip in each operator's backward rule in turn; passes when
/// the gradient suite catches every one of them.
CheckResult check_mutation_sensitivity(const GradSuiteOptions& opts = {});

/// The fast subset run by `spotlight verify`.
std::vector<CheckResult> verify_suite();

CheckResult timed(const std::string& name, const std::function<CheckResult()>& fn);

}  // namespace spotlight::oracles

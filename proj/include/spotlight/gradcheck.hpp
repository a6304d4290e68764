#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spotlight/autograd.hpp"

namespace spotlight {

/// A function of tensors under test. It must build its graph on the given
/// tape from the given leaves and be deterministic.
using GradFn = std::function<Var(Tape&, std::span<const Var>)>;

class NondeterministicOpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  /// Denominator floor for relative error, so components that are zero up
  /// to rounding do not dominate.
  double floor = 1e-6;
  /// Seed for the random projection applied to non-scalar outputs.
  std::uint64_t seed = 0x5eed;
  /// Which inputs to differentiate; empty means all.
  std::vector<bool> differentiable;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<double> per_input;
  bool passed = false;
};

/// Compares reverse-mode gradients against central finite differences.
/// Non-scalar outputs are reduced with a fixed random projection first.
GradCheckReport grad_check(const GradFn& fn, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& opts = {});

double relative_error(double analytic, double numeric, double floor);

}  // namespace spotlight

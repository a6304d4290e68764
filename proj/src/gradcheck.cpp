#include "spotlight/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "spotlight/ops.hpp"

namespace spotlight {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

struct Evaluator {
  const GradFn& fn;
  Tensor projection;  // empty until the output shape is known
  std::uint64_t seed;

  double operator()(const std::vector<Tensor>& inputs) {
    Tape tape(false);
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (const Tensor& t : inputs) leaves.emplace_back(t, false);
    const Var out = fn(tape, leaves);
    return project(out.value());
  }

  double project(const Tensor& out) {
    if (out.size() == 1) return out[0];
    ensure_projection(out.shape());
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += projection[i] * out[i];
    return acc;
  }

  void ensure_projection(const Shape& s) {
    if (!projection.empty() && projection.shape() == s) return;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(0.5, 1.5);
    std::bernoulli_distribution flip(0.5);
    projection = Tensor(s);
    for (double& v : projection.data()) v = flip(rng) ? dist(rng) : -dist(rng);
  }
};

}  // namespace

GradCheckReport grad_check(const GradFn& fn, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& opts) {
  for (const Tensor& t : inputs) {
    if (!t.all_finite()) throw std::invalid_argument("grad_check inputs must be finite");
  }
  Evaluator eval{fn, {}, opts.seed};

  // Analytic pass.
  Tape tape(true);
  std::vector<Var> leaves;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const bool diff = opts.differentiable.empty() || opts.differentiable[i];
    leaves.emplace_back(inputs[i], diff);
  }
  const Var out = fn(tape, leaves);
  Var loss = out;
  if (out.value().size() != 1) {
    eval.ensure_projection(out.shape());
    loss = ops::weighted_sum(tape, out, eval.projection);
  }
  tape.backward(loss);

  const double base_a = eval(inputs);
  const double base_b = eval(inputs);
  if (base_a != base_b) {
    throw NondeterministicOpError("operator under test is not deterministic");
  }

  GradCheckReport report;
  report.per_input.assign(inputs.size(), 0.0);
  std::vector<Tensor> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!leaves[i].requires_grad()) continue;
    const Tensor analytic =
        leaves[i].has_grad() ? leaves[i].grad() : Tensor(inputs[i].shape());
    double worst = 0.0;
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double orig = inputs[i][j];
      probe[i][j] = orig + opts.step;
      const double up = eval(probe);
      probe[i][j] = orig - opts.step;
      const double down = eval(probe);
      probe[i][j] = orig;
      const double numeric = (up - down) / (2.0 * opts.step);
      worst = std::max(worst, relative_error(analytic[j], numeric, opts.floor));
    }
    report.per_input[i] = worst;
    report.max_rel_error = std::max(report.max_rel_error, worst);
  }
  report.passed = report.max_rel_error <= opts.tolerance;
  return report;
}

}  // namespace spotlight

#include "spotlight/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "spotlight/errors.hpp"
#include "spotlight/ops.hpp"

namespace spotlight {
namespace {

void check_same(const Var& pred, const Tensor& target, const Tensor& ignore,
                const char* op) {
  if (!(pred.shape() == target.shape()) || !(pred.shape() == ignore.shape())) {
    throw ShapeError(std::string(op) + ": prediction " + pred.shape().str() +
                     ", target " + target.shape().str() + ", ignore " +
                     ignore.shape().str());
  }
}

double clamp_prob(double x) {
  return std::clamp(x, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

double pixel_bce(double x, double y) {
  const double xc = clamp_prob(x);
  return -(y * std::log(xc) + (1.0 - y) * std::log(1.0 - xc));
}

}  // namespace

LossKind parse_loss_kind(const std::string& name) {
  if (name == "bce" || name == "BCE") return LossKind::kBce;
  if (name == "dice" || name == "DICE") return LossKind::kDice;
  throw ValidationError("unknown loss kind '" + name + "' (expected bce|dice)");
}

const char* loss_kind_name(LossKind kind) {
  return kind == LossKind::kBce ? "bce" : "dice";
}

std::vector<std::size_t> ohem_selection(const Tensor& pred, const Tensor& target,
                                        const Tensor& ignore, double ratio) {
  std::vector<std::size_t> positives, negatives;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (ignore[i] > 0.5) continue;
    (target[i] > 0.5 ? positives : negatives).push_back(i);
  }
  std::size_t keep;
  if (positives.empty()) {
    keep = std::min(negatives.size(), kOhemNoPositiveCap);
  } else {
    keep = std::min(negatives.size(),
                    static_cast<std::size_t>(std::floor(ratio * positives.size())));
  }
  const auto harder = [&](std::size_t a, std::size_t b) {
    const double la = pixel_bce(pred[a], 0.0);
    const double lb = pixel_bce(pred[b], 0.0);
    if (la != lb) return la > lb;
    return a < b;
  };
  if (keep < negatives.size()) {
    std::nth_element(negatives.begin(), negatives.begin() + keep, negatives.end(), harder);
    negatives.resize(keep);
  }
  std::vector<std::size_t> selected = std::move(positives);
  selected.insert(selected.end(), negatives.begin(), negatives.end());
  std::sort(selected.begin(), selected.end());
  return selected;
}

Var bce_ohem(Tape& tape, const Var& pred, const Tensor& target,
             const Tensor& ignore, double ratio) {
  check_same(pred, target, ignore, "bce_ohem");
  // A NaN prediction yields a NaN loss so the trainer can flag divergence.
  if (!pred.value().all_finite()) {
    return Var(Tensor::scalar(std::numeric_limits<double>::quiet_NaN()));
  }
  for (double x : pred.value().data()) {
    if (x < 0.0 || x > 1.0) throw ValidationError("bce_ohem: prediction outside [0, 1]");
  }
  std::vector<std::size_t> selected = ohem_selection(pred.value(), target, ignore, ratio);
  double acc = 0.0;
  for (std::size_t i : selected) acc += pixel_bce(pred.value()[i], target[i]);
  const double loss = selected.empty() ? 0.0 : acc / static_cast<double>(selected.size());

  Var result(Tensor::scalar(loss), tape.wants({&pred}));
  if (result.requires_grad() && !selected.empty()) {
    tape.record([pred, result, target, selected = std::move(selected)]() {
      if (!result.has_grad()) return;
      const double sign = fault::armed(OpKind::kBceOhem) ? -1.0 : 1.0;
      const double scale = sign * result.grad()[0] / static_cast<double>(selected.size());
      Tensor g(pred.shape());
      for (std::size_t i : selected) {
        const double x = pred.value()[i];
        if (x < kProbabilityClamp || x > 1.0 - kProbabilityClamp) continue;
        const double y = target[i];
        g[i] = scale * (-y / x + (1.0 - y) / (1.0 - x));
      }
      pred.accumulate_grad(g);
    });
  }
  return result;
}

Var dice_loss(Tape& tape, const Var& pred, const Tensor& target,
              const Tensor& ignore) {
  check_same(pred, target, ignore, "dice_loss");
  double inter = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (ignore[i] > 0.5) continue;
    const double x = pred.value()[i];
    const double y = target[i];
    inter += x * y;
    sx += x * x;
    sy += y * y;
  }
  const double num = 2.0 * inter + kDiceSmoothing;
  const double den = sx + sy + kDiceSmoothing;
  Var result(Tensor::scalar(1.0 - num / den), tape.wants({&pred}));
  if (result.requires_grad()) {
    tape.record([pred, result, target, ignore, num, den]() {
      if (!result.has_grad()) return;
      const double sign = fault::armed(OpKind::kDice) ? -1.0 : 1.0;
      const double gy = sign * result.grad()[0];
      Tensor g(pred.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (ignore[i] > 0.5) continue;
        const double x = pred.value()[i];
        const double d_coef = (2.0 * target[i] * den - num * 2.0 * x) / (den * den);
        g[i] = -gy * d_coef;
      }
      pred.accumulate_grad(g);
    });
  }
  return result;
}

namespace {

Var mask_loss(Tape& tape, LossKind kind, const Var& pred, const Tensor& target,
              const Tensor& ignore, double ratio) {
  return kind == LossKind::kBce ? bce_ohem(tape, pred, target, ignore, ratio)
                                : dice_loss(tape, pred, target, ignore);
}

}  // namespace

LossBreakdown total_loss(Tape& tape, const Var& m_cs, const Var& m_rs,
                         const Tensor& target, const Tensor& ignore,
                         const LossConfig& cfg) {
  const Shape t = target.shape();
  const Shape cs = m_cs.shape();
  if (cs.h * 4 != t.h || cs.w * 4 != t.w || cs.n != t.n || cs.c != 1) {
    throw ShapeError("coarse mask " + cs.str() + " is not 1/4 of target " + t.str());
  }
  if (!(m_rs.shape() == t)) {
    throw ShapeError("refined mask " + m_rs.shape().str() + " does not match target " + t.str());
  }
  const Var coarse_full = ops::upsample_nearest(tape, m_cs, 4);
  const Var l_cm = mask_loss(tape, cfg.coarse, coarse_full, target, ignore, cfg.ohem_ratio);
  const Var l_rm = mask_loss(tape, cfg.refined, m_rs, target, ignore, cfg.ohem_ratio);
  LossBreakdown out;
  out.coarse = l_cm.value()[0];
  out.refined = l_rm.value()[0];
  out.total = ops::add(tape, ops::scale(tape, l_cm, cfg.lambda1),
                       ops::scale(tape, l_rm, cfg.lambda2));
  return out;
}

}  // namespace spotlight

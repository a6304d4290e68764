#pragma once

#include <string>
#include <vector>

#include "spotlight/autograd.hpp"

namespace spotlight {

enum class LossKind { kBce, kDice };

LossKind parse_loss_kind(const std::string& name);
const char* loss_kind_name(LossKind kind);

struct LossConfig {
  double lambda1 = 6.0;  // coarse mask weight
  double lambda2 = 1.0;  // refined mask weight
  LossKind coarse = LossKind::kBce;
  LossKind refined = LossKind::kBce;
  double ohem_ratio = 3.0;  // negatives kept per positive
};

inline constexpr double kProbabilityClamp = 1e-7;
inline constexpr double kDiceSmoothing = 1.0;
inline constexpr std::size_t kOhemNoPositiveCap = 1000;

/// Flat indices of the pixels OHEM keeps: every non-ignored positive plus the
/// floor(ratio * positives) highest-loss non-ignored negatives (ties go to the
/// lower index). Without positives, the min(negatives, 1000) hardest
/// negatives. Returned in ascending index order.
std::vector<std::size_t> ohem_selection(const Tensor& pred, const Tensor& target,
                                        const Tensor& ignore, double ratio);

/// Mean binary cross-entropy over the OHEM selection. `ignore` marks pixels
/// (value > 0.5) excluded from the selection.
Var bce_ohem(Tape& tape, const Var& pred, const Tensor& target,
             const Tensor& ignore, double ratio = 3.0);

/// 1 - (2*sum(x*y) + 1) / (sum(x^2) + sum(y^2) + 1) over non-ignored pixels.
Var dice_loss(Tape& tape, const Var& pred, const Tensor& target,
              const Tensor& ignore);

struct LossBreakdown {
  Var total;
  double coarse = 0.0;
  double refined = 0.0;
};

/// lambda1 * L(upsample4(m_cs)) + lambda2 * L(m_rs) against the full-resolution
/// kernel target.
LossBreakdown total_loss(Tape& tape, const Var& m_cs, const Var& m_rs,
                         const Tensor& target, const Tensor& ignore,
                         const LossConfig& cfg);

}  // namespace spotlight

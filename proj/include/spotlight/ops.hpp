#pragma once

#include <span>
#include <vector>

#include "spotlight/autograd.hpp"
#include "spotlight/tensor.hpp"

// Differentiable operators of the detector graph. Every function computes its
// forward value eagerly and, when the tape is enabled and some input requires
// a gradient, records the matching backward rule.
namespace spotlight::ops {

enum class Mode { kTrain, kEval };

struct RunningStats {
  Tensor mean;  // (1,C,1,1)
  Tensor var;   // (1,C,1,1)
  static RunningStats identity(int channels);
};

/// weights: (out, in, kh, kw); bias: (1, out, 1, 1) or undefined.
Var conv2d(Tape& tape, const Var& input, const ConvSpec& spec,
           const Var& weights, const Var& bias = {});

/// weights: (in, out, kh, kw). Output size (in-1)*stride - pad + d*(k-1) + 1.
Var conv_transpose2d(Tape& tape, const Var& input, const ConvSpec& spec,
                     const Var& weights, const Var& bias = {});

/// gamma/beta: (1,C,1,1). Train mode normalizes by batch statistics (biased
/// variance) and folds them into `stats` with the given momentum, storing the
/// unbiased variance; eval mode uses `stats` and leaves it untouched.
Var batch_norm(Tape& tape, const Var& input, const Var& gamma, const Var& beta,
               RunningStats& stats, Mode mode, double momentum = 0.1,
               double epsilon = 1e-5);

Var relu(Tape& tape, const Var& x);
Var sigmoid(Tape& tape, const Var& x);
Var add(Tape& tape, const Var& a, const Var& b);
Var mul(Tape& tape, const Var& a, const Var& b);
/// x * constant; the constant is not differentiated.
Var scale(Tape& tape, const Var& x, double factor);
/// x * alpha where alpha is a (1,1,1,1) trainable scalar.
Var mul_scalar_param(Tape& tape, const Var& x, const Var& alpha);
/// x (N,C,H,W) times mask (N,1,H,W) broadcast over channels.
Var mul_channel_broadcast(Tape& tape, const Var& x, const Var& mask);
Var concat_channels(Tape& tape, std::span<const Var> parts);
Var slice_channels(Tape& tape, const Var& x, int begin, int count);
Var upsample_nearest(Tape& tape, const Var& x, int factor);

/// Scalar sum(x * weights) with constant weights; used to project tensor
/// outputs to a scalar for gradient checks.
Var weighted_sum(Tape& tape, const Var& x, const Tensor& weights);

}  // namespace spotlight::ops

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "spotlight/errors.hpp"
#include "spotlight/imageio.hpp"
#include "spotlight/labels.hpp"
#include "spotlight/losses.hpp"
#include "spotlight/model.hpp"

namespace spotlight {

struct TrainConfig {
  double base_lr = 0.007;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double poly_power = 0.9;
  int epochs = 1;
  int batch_size = 1;
  std::uint64_t seed = 0;
  bool flip = true;
  double gamma = 0.4;    // kernel shrink factor for the targets
  int input_size = 0;    // square training size; 0 keeps native size (padded to /32)
  int checkpoint_every = 0;  // steps; 0 writes only the final checkpoint
};

class NonFiniteGradientError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// base_lr * (1 - step/total)^power. Throws ValidationError when total <= 0
/// or step is outside [0, total].
double poly_lr(int step, int total, const TrainConfig& cfg);

struct SgdState {
  std::vector<Tensor> velocity;  // one per store entry, lazily sized
};

/// v = momentum*v + g + decay*p; p -= lr*v, for trainable entries. Entries
/// flagged without weight decay skip the decay term. Leaves parameters
/// untouched and throws NonFiniteGradientError if any gradient is not finite.
void sgd_step(ParamStore& store, SgdState& state, double lr, const TrainConfig& cfg);

struct Sample {
  std::string name;
  Image image;
  std::vector<Annotation> annotations;
};

/// Deterministic synthetic scenes: textured background plus filled
/// high-contrast rectangles and rounded rectangles, one annotation each.
std::vector<Sample> synth_dataset(std::uint64_t seed, int count, int size,
                                  int instances_per_image);

/// Pairs every image (.ppm/.pgm) in `dir` with `<stem>.txt`. Sorted by name.
std::vector<Sample> load_dataset(const std::filesystem::path& dir);
void write_dataset(std::span<const Sample> samples, const std::filesystem::path& dir);

struct TrainingItem {
  Tensor image;   // (1,3,H,W)
  Tensor target;  // (1,1,H,W) kernel mask
  Tensor ignore;  // (1,1,H,W) don't-care mask
};

TrainingItem prepare_item(const Sample& sample, const TrainConfig& cfg,
                          const Normalization& norm = {});

struct StepRecord {
  int step = 0;
  double lr = 0.0;
  double total = 0.0;
  double coarse = 0.0;
  double refined = 0.0;
  double alpha = 0.0;
};

struct TrainResult {
  std::vector<StepRecord> history;
  int steps = 0;
  bool diverged = false;
  std::string message;
};

int steps_per_epoch(std::size_t samples, const TrainConfig& cfg);

using StepCallback = std::function<void(const StepRecord&)>;

/// Runs the optimizer loop. When `checkpoint` is non-empty a checkpoint is
/// written every `checkpoint_every` steps and at the end. On a non-finite loss
/// or gradient the parameters of the last good step are restored, written,
/// and the result is flagged as diverged.
TrainResult train(StdModel& model, std::span<const Sample> data, const TrainConfig& cfg,
                  const LossConfig& loss_cfg, const std::filesystem::path& checkpoint = {},
                  const StepCallback& on_step = {});

Metadata train_metadata(const TrainConfig& cfg, const LossConfig& loss_cfg,
                        const TrainResult& result);

/// "step,lr,total,coarse,refined,alpha" CSV.
std::string format_loss_curve(std::span<const StepRecord> history);

}  // namespace spotlight

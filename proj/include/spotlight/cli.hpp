#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "spotlight/eval.hpp"
#include "spotlight/imageio.hpp"
#include "spotlight/losses.hpp"
#include "spotlight/model.hpp"
#include "spotlight/postprocess.hpp"
#include "spotlight/trainer.hpp"

namespace spotlight::cli {

/// Everything a command can be configured with. Keys use section prefixes,
/// e.g. `model.gamma=0.4` or `train.base_lr=0.007`.
struct RunConfig {
  ModelConfig model;
  double gamma = 0.4;
  DetectParams detect;  // beta 1.5, threshold, min_area
  LossConfig loss;
  TrainConfig train;
  Normalization norm;
  int short_side = 0;  // io.short_side; 0 keeps the native size
  std::uint64_t synthetic_seed = 7;
  int synthetic_count = 5;
  int synthetic_size = 256;
  int synthetic_instances = 2;
};

/// Applies one `key=value` setting. Throws ValidationError on unknown keys or
/// unparsable values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
/// Parses `key=value` lines; blank lines and `#` comments are skipped.
void apply_config_text(RunConfig& cfg, const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
std::string format_config(const RunConfig& cfg);

struct LabelgenOptions {
  std::filesystem::path annotations;
  std::filesystem::path images;
  std::filesystem::path out;
};

struct TrainOptions {
  std::filesystem::path data;  // ignored when synthetic
  bool synthetic = false;
  std::filesystem::path out;
  std::filesystem::path loss_curve;  // defaults to <out>.loss.csv
  std::filesystem::path dump_data;   // writes the training set when set
  int log_every = 0;
};

struct InferOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path images;  // a file or a directory
  std::filesystem::path out;
  bool overlay = false;
};

struct EvalOptions {
  std::filesystem::path det;
  std::filesystem::path gt;
  std::filesystem::path out;  // report.txt and report.json; empty skips writing
  double iou = 0.5;
};

struct BenchOptions {
  std::filesystem::path checkpoint;  // empty builds from the config
  int height = 640;
  int width = 640;
  int warmup = 1;
  int iters = 3;
};

/// Each command returns its exit status and throws ValidationError or
/// IoError for failures that abort the whole command.
int cmd_labelgen(const RunConfig& cfg, const LabelgenOptions& opts, std::ostream& log);
int cmd_train(const RunConfig& cfg, const TrainOptions& opts, std::ostream& log);
int cmd_infer(const RunConfig& cfg, const InferOptions& opts, std::ostream& log);
int cmd_eval(const EvalOptions& opts, std::ostream& log, EvalReport* report_out = nullptr);
int cmd_bench(const RunConfig& cfg, const BenchOptions& opts, std::ostream& log);
int cmd_verify(std::ostream& log);

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;

/// Runs `fn`, mapping IoError to 2 and validation, shape and geometry errors
/// to 1 after printing the message to `err`.
int run_guarded(const std::function<int()>& fn, std::ostream& err);

}  // namespace spotlight::cli

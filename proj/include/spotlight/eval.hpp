#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "spotlight/model.hpp"
#include "spotlight/postprocess.hpp"

namespace spotlight {

struct Match {
  int detection = 0;
  int ground_truth = 0;
  double iou = 0.0;
};

struct ImageEval {
  std::string name;
  int tp = 0, fp = 0, fn = 0;
  std::vector<Match> matches;
  std::vector<int> ignored_detections;
};

struct EvalReport {
  int tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f_measure = 0.0;
  std::vector<ImageEval> images;

  void add(ImageEval image);  // accumulates counts and refreshes the rates
};

struct Prf {
  double precision, recall, f_measure;
};

/// P = tp/(tp+fp), R = tp/(tp+fn), F = 2PR/(P+R); each 0 on a zero denominator.
Prf prf_from_counts(int tp, int fp, int fn);
double f_measure(double precision, double recall);

inline constexpr double kDontCareOverlap = 0.5;

/// Detections covered by a don't-care region (intersection over detection
/// area >= 0.5) are dropped first. The rest are matched one-to-one greedily
/// in descending IoU order (ties: lower detection, then lower ground-truth
/// index) while IoU >= iou_threshold.
ImageEval match_detections(std::span<const Polygon> dets, std::span<const Polygon> gts,
                           std::span<const Polygon> dont_care, double iou_threshold = 0.5);

/// "key: value" lines with the aggregate and one line per image.
std::string format_report_text(const EvalReport& report);
std::string format_report_json(const EvalReport& report);

struct BlockCost {
  std::int64_t macs = 0;
  std::int64_t params = 0;
};

/// Per-block multiply-accumulates for one forward pass at the given size and
/// per-block parameter counts (running statistics included, so BN holds 4C).
/// Keys are block paths such as "miem1/branches"; "total" sums everything.
std::map<std::string, BlockCost> count_flops_params(const StdModel& model, int height, int width);

struct Timing {
  double mean_ms = 0.0;
  double fps = 0.0;
  std::vector<double> samples_ms;
};

/// Times `work` (called once per iteration) after `warmup` untimed calls.
Timing time_iterations(const std::function<void()>& work, int warmup, int iters);

/// Forward pass plus post-processing on prepared tensors.
Timing timing_harness(const StdModel& model, std::span<const Tensor> images, int warmup,
                      int iters, const DetectParams& params = {});

}  // namespace spotlight

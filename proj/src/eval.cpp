#include "spotlight/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <stdexcept>

#include <json.hpp>

#include "spotlight/errors.hpp"

namespace spotlight {

double f_measure(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

Prf prf_from_counts(int tp, int fp, int fn) {
  const double p = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  const double r = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  return {p, r, f_measure(p, r)};
}

void EvalReport::add(ImageEval image) {
  tp += image.tp;
  fp += image.fp;
  fn += image.fn;
  const Prf prf = prf_from_counts(tp, fp, fn);
  precision = prf.precision;
  recall = prf.recall;
  f_measure = prf.f_measure;
  images.push_back(std::move(image));
}

namespace {

bool usable(const Polygon& p) {
  return p.size() >= 3 && area(p) > 0.0;
}

}  // namespace

ImageEval match_detections(std::span<const Polygon> dets, std::span<const Polygon> gts,
                           std::span<const Polygon> dont_care, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
    throw ValidationError("IoU threshold must lie in (0, 1)");
  }
  ImageEval out;
  std::vector<int> live;
  for (int d = 0; d < static_cast<int>(dets.size()); ++d) {
    const double det_area = usable(dets[d]) ? area(dets[d]) : 0.0;
    bool ignored = false;
    if (det_area > 0.0) {
      for (const Polygon& dc : dont_care) {
        if (usable(dc) && intersection_area(dets[d], dc) / det_area >= kDontCareOverlap) {
          ignored = true;
          break;
        }
      }
    }
    if (ignored) {
      out.ignored_detections.push_back(d);
    } else {
      live.push_back(d);
    }
  }

  std::vector<Match> candidates;
  for (int d : live) {
    for (int g = 0; g < static_cast<int>(gts.size()); ++g) {
      const double iou = polygon_iou(dets[d], gts[g]);
      if (iou >= iou_threshold) candidates.push_back({d, g, iou});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Match& a, const Match& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.detection != b.detection) return a.detection < b.detection;
    return a.ground_truth < b.ground_truth;
  });
  std::vector<bool> det_used(dets.size(), false), gt_used(gts.size(), false);
  for (const Match& m : candidates) {
    if (det_used[m.detection] || gt_used[m.ground_truth]) continue;
    det_used[m.detection] = gt_used[m.ground_truth] = true;
    out.matches.push_back(m);
  }
  out.tp = static_cast<int>(out.matches.size());
  out.fp = static_cast<int>(live.size()) - out.tp;
  out.fn = static_cast<int>(gts.size()) - out.tp;
  return out;
}

std::string format_report_text(const EvalReport& r) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "images: %zu\ntp: %d\nfp: %d\nfn: %d\nprecision: %.6f\nrecall: %.6f\n"
                "f_measure: %.6f\n",
                r.images.size(), r.tp, r.fp, r.fn, r.precision, r.recall, r.f_measure);
  out += buf;
  for (const ImageEval& im : r.images) {
    const Prf prf = prf_from_counts(im.tp, im.fp, im.fn);
    std::snprintf(buf, sizeof(buf), "image.%s: tp=%d fp=%d fn=%d precision=%.6f recall=%.6f f_measure=%.6f\n",
                  im.name.c_str(), im.tp, im.fp, im.fn, prf.precision, prf.recall, prf.f_measure);
    out += buf;
  }
  return out;
}

std::string format_report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["tp"] = r.tp;
  j["fp"] = r.fp;
  j["fn"] = r.fn;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f_measure"] = r.f_measure;
  nlohmann::ordered_json images = nlohmann::ordered_json::array();
  for (const ImageEval& im : r.images) {
    nlohmann::ordered_json e;
    e["name"] = im.name;
    e["tp"] = im.tp;
    e["fp"] = im.fp;
    e["fn"] = im.fn;
    nlohmann::ordered_json matches = nlohmann::ordered_json::array();
    for (const Match& m : im.matches) {
      matches.push_back({{"detection", m.detection}, {"ground_truth", m.ground_truth}, {"iou", m.iou}});
    }
    e["matches"] = std::move(matches);
    e["ignored_detections"] = im.ignored_detections;
    images.push_back(std::move(e));
  }
  j["images"] = std::move(images);
  return j.dump(2) + "\n";
}

std::map<std::string, BlockCost> count_flops_params(const StdModel& model, int height, int width) {
  check_input_shape({1, 3, height, width});
  CostTally tally;
  Tape tape(false);
  tape.set_cost_tally(&tally);
  model.forward(tape, Var(Tensor({1, 3, height, width})), ops::Mode::kEval);

  std::map<std::string, BlockCost> out;
  for (const auto& [block, macs] : tally.macs) out[block].macs = macs;
  // Parameter names use '.' where cost paths use '/': "miem1.branch_1x9" is
  // charged to "miem1/branches".
  for (const auto& e : model.params().entries()) {
    const std::string& n = e.name;
    std::string block = n.substr(0, n.find('.'));
    if (block.rfind("miem", 0) == 0) {
      const std::string part = n.substr(n.find('.') + 1);
      if (part.rfind("branch", 0) == 0) block += "/branches";
      else if (part.rfind("reduce", 0) == 0) block += "/reduce";
      else if (part.rfind("standardize", 0) == 0) block += "/standardize";
      else block += "/project";
    }
    out[block].params += static_cast<std::int64_t>(e.var.value().size());
  }
  BlockCost total;
  for (const auto& [k, v] : out) {
    total.macs += v.macs;
    total.params += v.params;
  }
  out["total"] = total;
  return out;
}

Timing time_iterations(const std::function<void()>& work, int warmup, int iters) {
  if (iters < 1) throw ValidationError("timing needs at least one iteration");
  for (int i = 0; i < warmup; ++i) work();
  Timing t;
  for (int i = 0; i < iters; ++i) {
    const auto start = std::chrono::steady_clock::now();
    work();
    const auto stop = std::chrono::steady_clock::now();
    t.samples_ms.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
  }
  double sum = 0.0;
  for (double s : t.samples_ms) sum += s;
  t.mean_ms = sum / iters;
  t.fps = t.mean_ms > 0.0 ? 1000.0 / t.mean_ms : 0.0;
  return t;
}

Timing timing_harness(const StdModel& model, std::span<const Tensor> images, int warmup,
                      int iters, const DetectParams& params) {
  if (images.empty()) throw ValidationError("timing needs at least one image");
  std::size_t next = 0;
  return time_iterations(
      [&] {
        Tape tape(false);
        const ForwardResult r = model.forward(tape, Var(images[next % images.size()]), ops::Mode::kEval);
        detect(r.m_rs.value(), params);
        ++next;
      },
      warmup, iters);
}

}  // namespace spotlight

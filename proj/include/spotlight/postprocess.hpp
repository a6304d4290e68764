#pragma once

#include <string>
#include <vector>

#include "spotlight/geometry.hpp"
#include "spotlight/tensor.hpp"

namespace spotlight {

struct Detection {
  Polygon polygon;
  double score = 0.0;  // mean probability over the kernel region
};

struct DetectParams {
  double threshold = 0.5;
  int min_area = 16;
  double beta = 1.5;
  double simplify_epsilon = 0.5;
};

/// Pixel set iff probability > threshold. `prob` is (1,1,H,W).
BinaryMask binarize(const Tensor& prob, double threshold);

struct Components {
  int height = 0;
  int width = 0;
  std::vector<int> labels;  // 0 = background, regions numbered 1..count
  std::vector<int> areas;   // areas[k-1] is the pixel count of region k
  int count() const { return static_cast<int>(areas.size()); }
  int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

/// 4-connected labeling. Regions smaller than `min_area` are dropped; the rest
/// are numbered in raster order of their first pixel.
Components connected_components(const BinaryMask& mask, int min_area);

/// Outer boundary of region `label` traced along pixel edges, so the polygon
/// re-rasterizes to the region with its holes filled. Canonical orientation.
Polygon extract_contour(const Components& comps, int label);

/// Grows the kernel by area * beta / perimeter. beta = 0 returns the polygon
/// unchanged (canonicalized). Throws GeometryError for degenerate input.
Polygon expand_kernel(const Polygon& kernel, double beta);

/// Full pipeline on a refined probability map; sorted by descending score.
std::vector<Detection> detect(const Tensor& prob, const DetectParams& params = {});

/// One detection per line: "score;x1,y1,...,xn,yn".
std::string format_detections(const std::vector<Detection>& dets);
std::vector<Detection> parse_detections(const std::string& text);

}  // namespace spotlight

#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "spotlight/geometry.hpp"

namespace spotlight {

/// One annotated text instance. Don't-care instances ("###") are masked out
/// of the loss and of evaluation matching.
struct Annotation {
  Polygon polygon;
  bool dont_care = false;
};

/// Parses "x1,y1,...,xn,yn[,###]" lines. A trailing non-numeric field is a
/// transcription and is ignored unless it is "###".
std::vector<Annotation> parse_annotations(std::istream& in);
std::vector<Annotation> read_annotation_file(const std::filesystem::path& path);
std::string format_annotation(const Annotation& a);

/// S = A * (1 - gamma^2) / P
double shrink_distance(const Polygon& poly, double gamma);

struct KernelLabel {
  BinaryMask kernel;   // union of shrunk care instances
  BinaryMask text;     // union of unshrunk care instances
  BinaryMask ignore;   // union of don't-care instances
  std::vector<std::vector<Polygon>> kernels;  // per instance, after shrinking
  std::vector<double> shrink;                 // per instance S_i
  std::vector<bool> collapsed;                // shrink left nothing
  int ignored = 0;

  int collapsed_count() const;
};

KernelLabel make_kernel_label(std::span<const Annotation> instances, double gamma,
                              int height, int width);
KernelLabel make_kernel_label(std::span<const Polygon> instances, double gamma,
                              int height, int width);

}  // namespace spotlight

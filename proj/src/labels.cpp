#include "spotlight/labels.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <sstream>

#include "spotlight/errors.hpp"

namespace spotlight {
namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

bool parse_double(const std::string& field, double& out) {
  const std::string t = trim(field);
  if (t.empty()) return false;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace

std::vector<Annotation> parse_annotations(std::istream& in) {
  std::vector<Annotation> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    line = trim(line);
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);

    Annotation a;
    std::vector<double> coords;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      double v;
      if (parse_double(fields[i], v)) {
        coords.push_back(v);
        continue;
      }
      // Everything from the first non-numeric field on is the transcription.
      std::string rest = fields[i];
      for (std::size_t j = i + 1; j < fields.size(); ++j) rest += "," + fields[j];
      a.dont_care = trim(rest) == "###";
      break;
    }
    if (coords.size() % 2 != 0 || coords.size() < 6) {
      throw ValidationError("annotation line " + std::to_string(lineno) +
                            ": expected at least 3 x,y pairs");
    }
    for (std::size_t i = 0; i < coords.size(); i += 2) {
      a.polygon.vertices.push_back({coords[i], coords[i + 1]});
    }
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<Annotation> read_annotation_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotation file " + path.string());
  return parse_annotations(in);
}

std::string format_annotation(const Annotation& a) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < a.polygon.vertices.size(); ++i) {
    const Point& p = a.polygon.vertices[i];
    std::snprintf(buf, sizeof(buf), "%s%.17g,%.17g", i ? "," : "", p.x, p.y);
    out += buf;
  }
  if (a.dont_care) out += ",###";
  return out;
}

double shrink_distance(const Polygon& poly, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw GeometryError("shrink factor must lie in (0, 1)");
  }
  const double a = area(poly);
  const double p = perimeter(poly);
  if (!(a > 0.0) || !(p > 0.0)) throw GeometryError("degenerate polygon");
  return a * (1.0 - gamma * gamma) / p;
}

int KernelLabel::collapsed_count() const {
  return static_cast<int>(std::count(collapsed.begin(), collapsed.end(), true));
}

KernelLabel make_kernel_label(std::span<const Annotation> instances, double gamma,
                              int height, int width) {
  KernelLabel label;
  std::vector<Polygon> kernel_polys, text_polys, ignore_polys;
  for (const Annotation& a : instances) {
    if (a.dont_care) {
      ignore_polys.push_back(a.polygon);
      ++label.ignored;
      continue;
    }
    const double s = shrink_distance(a.polygon, gamma);
    std::vector<Polygon> shrunk = offset_polygon(a.polygon, -s);
    label.shrink.push_back(s);
    label.collapsed.push_back(shrunk.empty());
    text_polys.push_back(a.polygon);
    for (const Polygon& p : shrunk) kernel_polys.push_back(p);
    label.kernels.push_back(std::move(shrunk));
  }
  label.kernel = rasterize(kernel_polys, height, width);
  label.text = rasterize(text_polys, height, width);
  label.ignore = rasterize(ignore_polys, height, width);
  return label;
}

KernelLabel make_kernel_label(std::span<const Polygon> instances, double gamma,
                              int height, int width) {
  std::vector<Annotation> anns;
  anns.reserve(instances.size());
  for (const Polygon& p : instances) anns.push_back({p, false});
  return make_kernel_label(anns, gamma, height, width);
}

}  // namespace spotlight

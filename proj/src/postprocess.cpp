#include "spotlight/postprocess.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "spotlight/errors.hpp"

namespace spotlight {

BinaryMask binarize(const Tensor& prob, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ValidationError("binarization threshold must lie in (0, 1)");
  }
  const Shape s = prob.shape();
  if (s.n != 1 || s.c != 1) throw ShapeError("probability map must be (1,1,H,W), got " + s.str());
  BinaryMask mask(s.h, s.w);
  for (std::size_t i = 0; i < mask.pixels.size(); ++i) mask.pixels[i] = prob[i] > threshold;
  return mask;
}

namespace {

int find_root(std::vector<int>& parent, int x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

}  // namespace

Components connected_components(const BinaryMask& mask, int min_area) {
  const int h = mask.height, w = mask.width;
  std::vector<int> provisional(static_cast<std::size_t>(h) * w, -1);
  std::vector<int> parent;
  // First pass: provisional ids with union-find on up/left neighbours.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask.at(y, x)) continue;
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const int up = y > 0 ? provisional[i - w] : -1;
      const int left = x > 0 ? provisional[i - 1] : -1;
      if (up < 0 && left < 0) {
        provisional[i] = static_cast<int>(parent.size());
        parent.push_back(provisional[i]);
      } else if (up >= 0 && left >= 0) {
        const int a = find_root(parent, up), b = find_root(parent, left);
        parent[std::max(a, b)] = std::min(a, b);
        provisional[i] = std::min(a, b);
      } else {
        provisional[i] = std::max(up, left);
      }
    }
  }
  std::vector<int> size(parent.size(), 0);
  for (int& p : provisional) {
    if (p >= 0) {
      p = find_root(parent, p);
      ++size[p];
    }
  }
  // Second pass: final numbering in raster order of first pixel.
  Components out;
  out.height = h;
  out.width = w;
  out.labels.assign(provisional.size(), 0);
  std::vector<int> final_id(parent.size(), 0);
  for (std::size_t i = 0; i < provisional.size(); ++i) {
    const int root = provisional[i];
    if (root < 0 || size[root] < min_area) continue;
    if (final_id[root] == 0) {
      out.areas.push_back(size[root]);
      final_id[root] = out.count();
    }
    out.labels[i] = final_id[root];
  }
  return out;
}

namespace {

// Boundary edges between pixel corners. Direction codes: 0 east, 1 south,
// 2 west, 3 north (screen coordinates). Each edge keeps its pixel on the right.
constexpr int kDx[4] = {1, 0, -1, 0};
constexpr int kDy[4] = {0, 1, 0, -1};

struct Edge {
  int x, y, dir;  // start corner and direction
};

}  // namespace

Polygon extract_contour(const Components& comps, int label) {
  const int h = comps.height, w = comps.width;
  int x0 = w, y0 = h, x1 = -1, y1 = -1;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (comps.at(y, x) != label) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  if (x1 < 0) throw GeometryError("region " + std::to_string(label) + " is empty");
  const auto inside = [&](int x, int y) {
    return x >= 0 && y >= 0 && x < w && y < h && comps.at(y, x) == label;
  };

  const int cw = x1 - x0 + 2;  // corner grid width
  const auto corner_id = [&](int x, int y) { return (y - y0) * cw + (x - x0); };
  std::vector<Edge> edges;
  std::unordered_map<int, std::vector<int>> outgoing;
  const auto add = [&](int x, int y, int dir) {
    outgoing[corner_id(x, y)].push_back(static_cast<int>(edges.size()));
    edges.push_back({x, y, dir});
  };
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (!inside(x, y)) continue;
      if (!inside(x, y - 1)) add(x, y, 0);
      if (!inside(x + 1, y)) add(x + 1, y, 1);
      if (!inside(x, y + 1)) add(x + 1, y + 1, 2);
      if (!inside(x - 1, y)) add(x, y + 1, 3);
    }
  }

  std::vector<bool> used(edges.size(), false);
  std::vector<Point> best;
  double best_area = 0.0;
  for (std::size_t start = 0; start < edges.size(); ++start) {
    if (used[start]) continue;
    std::vector<Point> ring;
    int e = static_cast<int>(start);
    while (!used[e]) {
      used[e] = true;
      const Edge& cur = edges[e];
      ring.push_back({static_cast<double>(cur.x), static_cast<double>(cur.y)});
      const int nx = cur.x + kDx[cur.dir], ny = cur.y + kDy[cur.dir];
      const std::vector<int>& next = outgoing[corner_id(nx, ny)];
      int chosen = -1;
      if (next.size() == 1) {
        chosen = next[0];
      } else {
        // Pinch corner: take the left turn, which joins diagonal neighbours
        // and keeps the outer ring simple.
        const int left = (cur.dir + 3) % 4;
        for (int cand : next) {
          if (edges[cand].dir == left) chosen = cand;
        }
        if (chosen < 0) chosen = next[0];
      }
      e = chosen;
    }
    double a2 = 0.0;
    for (std::size_t i = 0; i < ring.size(); ++i) {
      const Point& p = ring[i];
      const Point& q = ring[(i + 1) % ring.size()];
      a2 += p.x * q.y - q.x * p.y;
    }
    if (std::abs(a2) > best_area) {
      best_area = std::abs(a2);
      best = std::move(ring);
    }
  }
  return canonical(Polygon{std::move(best)});
}

Polygon expand_kernel(const Polygon& kernel, double beta) {
  const Polygon poly = canonical(kernel);
  validate(poly);
  if (beta < 0.0) throw GeometryError("expansion factor must be non-negative");
  if (beta == 0.0) return poly;
  const double offset = area(poly) * beta / perimeter(poly);
  std::vector<Polygon> pieces = offset_polygon(poly, offset);
  if (pieces.empty()) throw GeometryError("expansion produced no polygon");
  return pieces.front();
}

std::vector<Detection> detect(const Tensor& prob, const DetectParams& params) {
  const BinaryMask mask = binarize(prob, params.threshold);
  const Components comps = connected_components(mask, std::max(1, params.min_area));
  std::vector<double> prob_sum(comps.count(), 0.0);
  for (std::size_t i = 0; i < comps.labels.size(); ++i) {
    if (comps.labels[i] > 0) prob_sum[comps.labels[i] - 1] += prob[i];
  }
  std::vector<Detection> out;
  for (int k = 1; k <= comps.count(); ++k) {
    const Polygon contour = extract_contour(comps, k);
    Polygon kernel = simplify(contour, params.simplify_epsilon);
    if (kernel.size() < 3 || !is_simple(kernel) || !(area(kernel) > 0.0)) kernel = contour;
    Detection d;
    d.polygon = expand_kernel(kernel, params.beta);
    d.score = prob_sum[k - 1] / comps.areas[k - 1];
    out.push_back(std::move(d));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return out;
}

std::string format_detections(const std::vector<Detection>& dets) {
  std::string out;
  char buf[64];
  for (const Detection& d : dets) {
    std::snprintf(buf, sizeof(buf), "%.6f;", d.score);
    out += buf;
    for (std::size_t i = 0; i < d.polygon.vertices.size(); ++i) {
      const Point& p = d.polygon.vertices[i];
      std::snprintf(buf, sizeof(buf), "%s%.3f,%.3f", i ? "," : "", p.x, p.y);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

std::vector<Detection> parse_detections(const std::string& text) {
  std::vector<Detection> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::size_t semi = line.find(';');
    if (semi == std::string::npos) {
      throw ValidationError("detection line " + std::to_string(lineno) + ": missing ';'");
    }
    const auto number = [&](std::string_view field) {
      while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
      while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc() || ptr != field.data() + field.size()) {
        throw ValidationError("detection line " + std::to_string(lineno) + ": bad number '" +
                              std::string(field) + "'");
      }
      return v;
    };
    Detection d;
    d.score = number(std::string_view(line).substr(0, semi));
    std::vector<double> coords;
    std::string_view rest = std::string_view(line).substr(semi + 1);
    while (!rest.empty()) {
      const std::size_t comma = rest.find(',');
      coords.push_back(number(rest.substr(0, comma)));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (coords.size() < 6 || coords.size() % 2 != 0) {
      throw ValidationError("detection line " + std::to_string(lineno) +
                            ": expected at least 3 x,y pairs");
    }
    for (std::size_t i = 0; i < coords.size(); i += 2) {
      d.polygon.vertices.push_back({coords[i], coords[i + 1]});
    }
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace spotlight

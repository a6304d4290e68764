#include "spotlight/geometry.hpp"

#include <algorithm>
#include <cmath>

#include <boost/geometry.hpp>
#include <boost/geometry/geometries/point_xy.hpp>
#include <boost/geometry/geometries/polygon.hpp>
#include <boost/geometry/geometries/multi_polygon.hpp>

namespace bg = boost::geometry;

namespace spotlight {
namespace {

using BPoint = bg::model::d2::point_xy<double>;
using BPolygon = bg::model::polygon<BPoint, /*ClockWise=*/false, /*Closed=*/true>;
using BMulti = bg::model::multi_polygon<BPolygon>;

constexpr int kRoundJoinPoints = 72;
constexpr double kMiterLimit = 2.0;

BPolygon to_boost(const Polygon& poly) {
  BPolygon out;
  for (const Point& p : poly.vertices) bg::append(out.outer(), BPoint(p.x, p.y));
  if (!poly.vertices.empty()) {
    bg::append(out.outer(), BPoint(poly.vertices.front().x, poly.vertices.front().y));
  }
  bg::correct(out);
  return out;
}

Polygon from_boost_ring(const BPolygon& poly) {
  Polygon out;
  const auto& ring = poly.outer();
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    out.vertices.push_back({ring[i].x(), ring[i].y()});
  }
  return canonical(std::move(out));
}

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool on_segment(const Point& p, const Point& a, const Point& b) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
         std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
}

int sgn(double v) { return (v > 0) - (v < 0); }

bool segments_touch(const Point& p1, const Point& p2, const Point& q1,
                    const Point& q2) {
  const int d1 = sgn(cross(q1, q2, p1));
  const int d2 = sgn(cross(q1, q2, p2));
  const int d3 = sgn(cross(p1, p2, q1));
  const int d4 = sgn(cross(p1, p2, q2));
  if (d1 * d2 < 0 && d3 * d4 < 0) return true;
  if (d1 == 0 && on_segment(p1, q1, q2)) return true;
  if (d2 == 0 && on_segment(p2, q1, q2)) return true;
  if (d3 == 0 && on_segment(q1, p1, p2)) return true;
  if (d4 == 0 && on_segment(q2, p1, p2)) return true;
  return false;
}

// Fills one polygon's even-odd interior into `mask` by XOR.
void scanline_fill(const Polygon& poly, BinaryMask& mask) {
  const auto& v = poly.vertices;
  const std::size_t n = v.size();
  if (n < 3) return;
  double ymin = v[0].y, ymax = v[0].y;
  for (const Point& p : v) {
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  const int row_begin = std::max(0, static_cast<int>(std::ceil(ymin - 0.5)));
  const int row_end = std::min(mask.height, static_cast<int>(std::ceil(ymax - 0.5)));
  std::vector<double> xs;
  for (int row = row_begin; row < row_end; ++row) {
    const double yc = row + 0.5;
    xs.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const Point& a = v[i];
      const Point& b = v[(i + 1) % n];
      const bool crosses = (a.y <= yc && yc < b.y) || (b.y <= yc && yc < a.y);
      if (!crosses) continue;
      xs.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      // Columns whose center c + 0.5 lies in [xs[k], xs[k+1]).
      const int c0 = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
      const int c1 = std::min(mask.width, static_cast<int>(std::ceil(xs[k + 1] - 0.5)));
      for (int c = c0; c < c1; ++c) mask.at(row, c) ^= 1;
    }
  }
}

}  // namespace

Polygon Polygon::rectangle(double x0, double y0, double x1, double y1) {
  return Polygon{{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}};
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(pixels.begin(), pixels.end(), 1));
}

double signed_area(const Polygon& poly) {
  const auto& v = poly.vertices;
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Point& a = v[i];
    const Point& b = v[(i + 1) % v.size()];
    acc += a.x * b.y - b.x * a.y;
  }
  return 0.5 * acc;
}

double area(const Polygon& poly) { return std::abs(signed_area(poly)); }

double perimeter(const Polygon& poly) {
  const auto& v = poly.vertices;
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Point& a = v[i];
    const Point& b = v[(i + 1) % v.size()];
    acc += std::hypot(b.x - a.x, b.y - a.y);
  }
  return acc;
}

Polygon canonical(Polygon poly) {
  auto& v = poly.vertices;
  std::vector<Point> dedup;
  for (const Point& p : v) {
    if (dedup.empty() || !(dedup.back() == p)) dedup.push_back(p);
  }
  while (dedup.size() > 1 && dedup.front() == dedup.back()) dedup.pop_back();
  // Remove collinear vertices until stable.
  bool changed = true;
  while (changed && dedup.size() >= 3) {
    changed = false;
    for (std::size_t i = 0; i < dedup.size() && dedup.size() >= 3; ++i) {
      const Point& prev = dedup[(i + dedup.size() - 1) % dedup.size()];
      const Point& next = dedup[(i + 1) % dedup.size()];
      const double scale = std::hypot(next.x - prev.x, next.y - prev.y);
      if (std::abs(cross(prev, dedup[i], next)) <= 1e-12 * std::max(1.0, scale * scale)) {
        dedup.erase(dedup.begin() + static_cast<std::ptrdiff_t>(i));
        changed = true;
        break;
      }
    }
  }
  v = std::move(dedup);
  if (signed_area(poly) < 0) std::reverse(v.begin(), v.end());
  return poly;
}

bool is_simple(const Polygon& poly) {
  const auto& v = poly.vertices;
  const std::size_t n = v.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) {
        // Adjacent edges may only share their common vertex.
        const std::size_t shared = (j == i + 1) ? j : i;
        const Point& a = v[(shared + n - 1) % n];
        const Point& o = v[shared];
        const Point& b = v[(shared + 1) % n];
        if (std::abs(cross(o, a, b)) == 0.0 &&
            ((a.x - o.x) * (b.x - o.x) + (a.y - o.y) * (b.y - o.y)) > 0) {
          return false;  // folds back onto itself
        }
        continue;
      }
      if (segments_touch(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n])) return false;
    }
  }
  return true;
}

void validate(const Polygon& poly) {
  if (poly.size() < 3) throw GeometryError("polygon needs at least 3 vertices");
  if (!(area(poly) > 0.0)) throw GeometryError("polygon has zero area");
  if (!(perimeter(poly) > 0.0)) throw GeometryError("polygon has zero perimeter");
  if (!is_simple(poly)) throw GeometryError("polygon is self-intersecting");
}

std::vector<Polygon> offset_polygon(const Polygon& poly, double delta) {
  if (poly.size() < 3 || !(area(poly) > 0.0)) {
    throw GeometryError("cannot offset a degenerate polygon");
  }
  if (delta == 0.0) return {canonical(poly)};
  const BPolygon src = to_boost(poly);
  BMulti result;
  const bg::strategy::buffer::distance_symmetric<double> distance(delta);
  const bg::strategy::buffer::side_straight side;
  const bg::strategy::buffer::end_flat end;
  const bg::strategy::buffer::point_circle circle(kRoundJoinPoints);
  if (delta < 0) {
    bg::buffer(src, result, distance, side,
               bg::strategy::buffer::join_miter(kMiterLimit), end, circle);
  } else {
    bg::buffer(src, result, distance, side,
               bg::strategy::buffer::join_round(kRoundJoinPoints), end, circle);
  }
  std::vector<Polygon> out;
  for (const BPolygon& piece : result) {
    Polygon p = from_boost_ring(piece);
    if (p.size() >= 3 && area(p) > 0.0) out.push_back(std::move(p));
  }
  std::sort(out.begin(), out.end(),
            [](const Polygon& a, const Polygon& b) { return area(a) > area(b); });
  return out;
}

BinaryMask rasterize(std::span<const Polygon> polys, int height, int width) {
  BinaryMask out(height, width);
  BinaryMask scratch(height, width);
  for (const Polygon& p : polys) {
    std::fill(scratch.pixels.begin(), scratch.pixels.end(), 0);
    scanline_fill(p, scratch);
    for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] |= scratch.pixels[i];
  }
  return out;
}

namespace {

// Fallback for inputs Boost rejects (e.g. self-touching rings): rasterize both
// on a common fine grid.
double raster_iou(const Polygon& a, const Polygon& b) {
  double x0 = a.vertices[0].x, y0 = a.vertices[0].y, x1 = x0, y1 = y0;
  for (const Polygon* p : {&a, &b}) {
    for (const Point& v : p->vertices) {
      x0 = std::min(x0, v.x);
      y0 = std::min(y0, v.y);
      x1 = std::max(x1, v.x);
      y1 = std::max(y1, v.y);
    }
  }
  const double extent = std::max(x1 - x0, y1 - y0);
  if (!(extent > 0)) return 0.0;
  const double s = 512.0 / extent;
  auto map = [&](const Polygon& p) {
    Polygon q;
    for (const Point& v : p.vertices) q.vertices.push_back({(v.x - x0) * s, (v.y - y0) * s});
    return q;
  };
  const int h = static_cast<int>(std::ceil((y1 - y0) * s)) + 1;
  const int w = static_cast<int>(std::ceil((x1 - x0) * s)) + 1;
  const Polygon pa = map(a), pb = map(b);
  return mask_iou(rasterize(std::span(&pa, 1), h, w), rasterize(std::span(&pb, 1), h, w));
}

}  // namespace

double intersection_area(const Polygon& a, const Polygon& b) {
  BMulti inter;
  bg::intersection(to_boost(a), to_boost(b), inter);
  return bg::area(inter);
}

double polygon_iou(const Polygon& a, const Polygon& b) {
  if (a.size() < 3 || b.size() < 3) return 0.0;
  const double area_a = area(a);
  const double area_b = area(b);
  if (!(area_a > 0.0) || !(area_b > 0.0)) return 0.0;
  const BPolygon ba = to_boost(a);
  const BPolygon bb = to_boost(b);
  if (!bg::is_valid(ba) || !bg::is_valid(bb)) return raster_iou(a, b);
  BMulti inter;
  bg::intersection(ba, bb, inter);
  const double i = bg::area(inter);
  const double u = area_a + area_b - i;
  if (!(u > 0.0)) return 0.0;
  return std::clamp(i / u, 0.0, 1.0);
}

Polygon simplify(const Polygon& poly, double epsilon) {
  if (poly.size() <= 4) return poly;
  const BPolygon src = to_boost(poly);
  BPolygon out;
  bg::simplify(src, out, epsilon);
  Polygon result = from_boost_ring(out);
  if (result.size() < 3 || !(area(result) > 0.0)) return poly;
  return result;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw GeometryError("mask_iou: size mismatch");
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    inter += a.pixels[i] & b.pixels[i];
    uni += a.pixels[i] | b.pixels[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace spotlight

#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spotlight {

class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

/// Ordered vertex list in pixel coordinates, implicitly closed. Canonical
/// orientation has positive shoelace area, i.e. sum(x_i*y_{i+1} - x_{i+1}*y_i)
/// > 0 (counter-clockwise with the y axis pointing up).
struct Polygon {
  std::vector<Point> vertices;

  std::size_t size() const { return vertices.size(); }
  bool operator==(const Polygon&) const = default;  // same vertices in the same order
  static Polygon rectangle(double x0, double y0, double x1, double y1);
};

/// Single-channel 0/1 raster, row-major.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const;
  bool operator==(const BinaryMask&) const = default;
};

double signed_area(const Polygon& poly);
double area(const Polygon& poly);
double perimeter(const Polygon& poly);

/// Drops repeated and collinear vertices and flips to canonical orientation.
Polygon canonical(Polygon poly);
bool is_simple(const Polygon& poly);
/// Throws GeometryError unless the polygon has >= 3 vertices, positive area
/// and no self-intersections.
void validate(const Polygon& poly);

/// Offsets the polygon by `delta` pixels: negative shrinks with miter joins
/// (limit 2), positive grows with round joins. Shrinking may return zero
/// polygons (collapsed) or several (a concave shape split apart).
std::vector<Polygon> offset_polygon(const Polygon& poly, double delta);

/// Pixel (x, y) is set iff its center (x+0.5, y+0.5) lies inside any polygon
/// under the even-odd rule. Boundaries are half-open: a center exactly on a
/// top or left edge is inside, on a bottom or right edge outside.
BinaryMask rasterize(std::span<const Polygon> polys, int height, int width);

double intersection_area(const Polygon& a, const Polygon& b);
/// Area IoU through polygon clipping; 0 for degenerate input.
double polygon_iou(const Polygon& a, const Polygon& b);

/// Douglas-Peucker simplification of the closed ring.
Polygon simplify(const Polygon& poly, double epsilon);

double mask_iou(const BinaryMask& a, const BinaryMask& b);

}  // namespace spotlight

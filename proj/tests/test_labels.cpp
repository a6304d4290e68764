#include <queue>
#include <random>
#include <sstream>

#include "doctest.h"
#include "spotlight/errors.hpp"
#include "spotlight/labels.hpp"

using namespace spotlight;

namespace {

int count_components(const BinaryMask& m) {
  std::vector<int> seen(m.pixels.size(), 0);
  int comps = 0;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(y, x) || seen[y * m.width + x]) continue;
      ++comps;
      std::queue<std::pair<int, int>> q;
      q.push({y, x});
      seen[y * m.width + x] = 1;
      while (!q.empty()) {
        auto [cy, cx] = q.front();
        q.pop();
        const int dy[] = {1, -1, 0, 0}, dx[] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int ny = cy + dy[k], nx = cx + dx[k];
          if (ny < 0 || nx < 0 || ny >= m.height || nx >= m.width) continue;
          if (!m.at(ny, nx) || seen[ny * m.width + nx]) continue;
          seen[ny * m.width + nx] = 1;
          q.push({ny, nx});
        }
      }
    }
  return comps;
}

}  // namespace

TEST_CASE("shrink distance evaluations") {
  CHECK(shrink_distance(Polygon::rectangle(0, 0, 100, 40), 0.4) == doctest::Approx(12.0).epsilon(1e-12));
  CHECK(shrink_distance(Polygon::rectangle(0, 0, 1, 1), 0.4) == doctest::Approx(0.21).epsilon(1e-12));
  CHECK(shrink_distance(Polygon::rectangle(0, 0, 100, 40), 1.0 - 1e-9) < 1e-6);
  CHECK_THROWS_AS(shrink_distance(Polygon::rectangle(0, 0, 1, 1), 1.0), GeometryError);
  CHECK_THROWS_AS(shrink_distance(Polygon{{{0, 0}, {1, 0}, {2, 0}}}, 0.4), GeometryError);
}

TEST_CASE("kernel label of a single rectangle") {
  const Polygon r = Polygon::rectangle(10, 20, 110, 60);
  const KernelLabel label = make_kernel_label(std::span(&r, 1), 0.4, 96, 128);
  const Polygon expect = Polygon::rectangle(22, 32, 98, 48);
  CHECK(label.kernel == rasterize(std::span(&expect, 1), 96, 128));
  CHECK(label.kernel.count() == 76 * 16);
  REQUIRE(label.shrink.size() == 1);
  CHECK(label.shrink[0] == doctest::Approx(12.0));
  CHECK(label.collapsed_count() == 0);
}

TEST_CASE("kernel label of two far-apart instances has two components") {
  const std::vector<Polygon> polys{Polygon::rectangle(5, 5, 60, 30), Polygon::rectangle(70, 60, 120, 90)};
  const KernelLabel label = make_kernel_label(polys, 0.4, 100, 128);
  CHECK(count_components(label.kernel) == 2);
}

TEST_CASE("near-identity shrink keeps the text region") {
  const std::vector<Polygon> polys{Polygon::rectangle(4, 4, 124, 60), Polygon::rectangle(10, 70, 90, 120)};
  const KernelLabel label = make_kernel_label(polys, 0.999, 128, 128);
  CHECK(mask_iou(label.kernel, label.text) >= 0.95);
}

TEST_CASE("kernel pixels lie inside the text and grow with gamma") {
  const std::vector<Polygon> polys{
      Polygon{{{10, 10}, {70, 14}, {66, 40}, {12, 36}}},
      Polygon{{{80, 60}, {120, 60}, {120, 120}, {100, 90}, {80, 120}}}};
  std::size_t prev = 0;
  for (double gamma : {0.1, 0.3, 0.4, 0.6, 0.8, 0.95}) {
    const KernelLabel label = make_kernel_label(polys, gamma, 128, 128);
    for (std::size_t i = 0; i < label.kernel.pixels.size(); ++i) {
      if (label.kernel.pixels[i]) CHECK(label.text.pixels[i] == 1);
    }
    CHECK(label.kernel.count() >= prev);
    prev = label.kernel.count();
  }
}

TEST_CASE("collapsed and don't-care instances") {
  std::vector<Annotation> anns{{Polygon::rectangle(0, 0, 3, 3), false},
                               {Polygon::rectangle(10, 10, 60, 40), true},
                               {Polygon::rectangle(70, 10, 120, 40), false}};
  // A 3x3 square shrinks by 0.63 px, which is still a (tiny) polygon.
  KernelLabel label = make_kernel_label(anns, 0.4, 64, 128);
  CHECK(label.ignored == 1);
  CHECK(label.ignore.count() == 50 * 30);
  CHECK(label.kernel.at(20, 30) == 0);
  CHECK(label.collapsed_count() == 0);
}

TEST_CASE("rectangles never collapse under the area/perimeter shrink") {
  // S = wh(1-g^2)/(2(w+h)) < min(w,h)/2 for every rectangle.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> side(1.0, 80.0), g(0.01, 0.99);
  for (int trial = 0; trial < 200; ++trial) {
    const Polygon r = Polygon::rectangle(0, 0, side(rng), side(rng));
    const double s = shrink_distance(r, g(rng));
    CHECK(offset_polygon(r, -s).size() == 1);
  }
}

TEST_CASE("annotation parsing") {
  std::istringstream in(
      "\xEF\xBB\xBF" "1,2,3,4,5,6,7,8,hello\n"
      "\n"
      "10,10,20,10,20,20,###\n"
      "0.5,0.5,4.5,0.5,4.5,3.25\n");
  const auto anns = parse_annotations(in);
  REQUIRE(anns.size() == 3);
  CHECK(anns[0].polygon.size() == 4);
  CHECK_FALSE(anns[0].dont_care);
  CHECK(anns[1].dont_care);
  CHECK(anns[2].polygon.vertices[2].y == 3.25);
  std::istringstream round(format_annotation(anns[1]));
  const auto again = parse_annotations(round);
  CHECK(again[0].dont_care);
  CHECK(again[0].polygon.vertices == anns[1].polygon.vertices);
  std::istringstream bad("1,2,3\n");
  CHECK_THROWS_AS(parse_annotations(bad), ValidationError);
}

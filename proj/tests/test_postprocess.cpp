#include <algorithm>
#include <map>
#include <random>
#include <vector>

#include "doctest.h"
#include "spotlight/errors.hpp"
#include "spotlight/labels.hpp"
#include "spotlight/postprocess.hpp"

using namespace spotlight;

namespace {

Polygon rect(double x0, double y0, double x1, double y1) {
  return Polygon{{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}};
}

Tensor prob_from_mask(const BinaryMask& m, double on = 0.99, double off = 0.01) {
  Tensor t({1, 1, m.height, m.width});
  for (std::size_t i = 0; i < m.pixels.size(); ++i) t[i] = m.pixels[i] ? on : off;
  return t;
}

BinaryMask region_mask(const Components& c, int label) {
  BinaryMask m(c.height, c.width);
  for (std::size_t i = 0; i < c.labels.size(); ++i) m.pixels[i] = c.labels[i] == label;
  return m;
}

double contour_iou(const Components& c, int label) {
  const Polygon poly = extract_contour(c, label);
  const BinaryMask back = rasterize(std::span<const Polygon>(&poly, 1), c.height, c.width);
  return mask_iou(back, region_mask(c, label));
}

// Independent labeling by breadth-first flood fill.
std::vector<int> flood_fill_labels(const BinaryMask& m) {
  std::vector<int> labels(m.pixels.size(), 0);
  int next = 0;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(y, x) || labels[y * m.width + x]) continue;
      ++next;
      std::vector<std::pair<int, int>> queue{{y, x}};
      labels[y * m.width + x] = next;
      for (std::size_t q = 0; q < queue.size(); ++q) {
        const auto [cy, cx] = queue[q];
        const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int ny = cy + dy[k], nx = cx + dx[k];
          if (ny < 0 || nx < 0 || ny >= m.height || nx >= m.width) continue;
          if (!m.at(ny, nx) || labels[ny * m.width + nx]) continue;
          labels[ny * m.width + nx] = next;
          queue.push_back({ny, nx});
        }
      }
    }
  }
  return labels;
}

}  // namespace

TEST_CASE("binarize uses a strict threshold") {
  CHECK(binarize(Tensor({1, 1, 3, 4}, 0.5), 0.5).count() == 0);
  CHECK(binarize(Tensor({1, 1, 3, 4}, 0.5000001), 0.5).count() == 12);
  CHECK_THROWS_AS(binarize(Tensor({1, 1, 2, 2}, 0.5), 0.0), ValidationError);
  CHECK_THROWS_AS(binarize(Tensor({1, 1, 2, 2}, 0.5), 1.0), ValidationError);
  CHECK_THROWS_AS(binarize(Tensor({1, 2, 2, 2}, 0.5), 0.5), ShapeError);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t({1, 1, 17, 23});
  for (double& v : t.data()) v = u(rng);
  for (double thr : {0.1, 0.37, 0.5, 0.9}) {
    const auto expected = std::count_if(t.data().begin(), t.data().end(),
                                        [&](double v) { return v > thr; });
    CHECK(binarize(t, thr).count() == static_cast<std::size_t>(expected));
  }
}

TEST_CASE("connected components: rectangles, diagonals and min_area") {
  BinaryMask m(10, 12);
  for (int y = 1; y < 4; ++y)
    for (int x = 1; x < 5; ++x) m.at(y, x) = 1;
  for (int y = 6; y < 9; ++y)
    for (int x = 7; x < 11; ++x) m.at(y, x) = 1;
  const Components two = connected_components(m, 1);
  CHECK(two.count() == 2);
  CHECK(two.areas == std::vector<int>{12, 12});
  CHECK(two.at(1, 1) == 1);
  CHECK(two.at(6, 7) == 2);
  CHECK(connected_components(m, 13).count() == 0);

  BinaryMask diag(3, 3);
  diag.at(0, 0) = diag.at(1, 1) = diag.at(2, 2) = 1;
  CHECK(connected_components(diag, 1).count() == 3);
}

TEST_CASE("connected components agree with a flood-fill oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const int h = 5 + static_cast<int>(rng() % 30), w = 5 + static_cast<int>(rng() % 30);
    const double density = 0.3 + 0.4 * (trial % 5) / 4.0;
    std::bernoulli_distribution on(density);
    BinaryMask m(h, w);
    for (auto& p : m.pixels) p = on(rng);
    const Components c = connected_components(m, 1);
    const std::vector<int> oracle = flood_fill_labels(m);
    // Same partition: a bijection between label sets.
    std::map<int, int> fwd, bwd;
    bool consistent = true;
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      const int a = c.labels[i], b = oracle[i];
      if ((a == 0) != (b == 0)) consistent = false;
      if (a == 0) continue;
      if (!fwd.count(a)) fwd[a] = b;
      if (!bwd.count(b)) bwd[b] = a;
      if (fwd[a] != b || bwd[b] != a) consistent = false;
    }
    CHECK(consistent);
    CHECK(static_cast<int>(fwd.size()) == c.count());
  }
}

TEST_CASE("contour of a rasterized 10x5 rectangle") {
  BinaryMask m(12, 16);
  for (int y = 3; y < 8; ++y)
    for (int x = 2; x < 12; ++x) m.at(y, x) = 1;
  const Components c = connected_components(m, 1);
  const Polygon poly = extract_contour(c, 1);
  CHECK(poly.size() >= 4);
  CHECK(area(poly) == doctest::Approx(50.0));
  CHECK(signed_area(poly) > 0.0);
  CHECK(contour_iou(c, 1) >= 0.99);
  CHECK(simplify(poly, 0.5).size() == 4);
}

TEST_CASE("single pixel contour is the unit square around it") {
  BinaryMask m(6, 6);
  m.at(3, 3) = 1;
  const Components c = connected_components(m, 1);
  const Polygon poly = simplify(extract_contour(c, 1), 0.5);
  REQUIRE(poly.size() == 4);
  CHECK(area(poly) == doctest::Approx(1.0));
  for (const Point& p : poly.vertices) {
    CHECK((p.x == 3.0 || p.x == 4.0));
    CHECK((p.y == 3.0 || p.y == 4.0));
  }
}

TEST_CASE("L-shaped and pinched regions re-rasterize exactly") {
  BinaryMask l(12, 12);
  for (int y = 1; y < 10; ++y)
    for (int x = 1; x < 4; ++x) l.at(y, x) = 1;
  for (int y = 7; y < 10; ++y)
    for (int x = 1; x < 10; ++x) l.at(y, x) = 1;
  const Components c = connected_components(l, 1);
  CHECK(extract_contour(c, 1).size() >= 6);
  CHECK(simplify(extract_contour(c, 1), 0.5).size() == 6);
  CHECK(contour_iou(c, 1) >= 0.99);

  // Region with a hole and a diagonal pinch: the outer ring still covers it.
  BinaryMask h(9, 9);
  for (int y = 1; y < 6; ++y)
    for (int x = 1; x < 6; ++x) h.at(y, x) = (y == 1 || y == 5 || x == 1 || x == 5);
  h.at(6, 5) = 1;
  h.at(6, 6) = 1;
  h.at(7, 7) = 1;
  h.at(7, 6) = 1;
  const Components hc = connected_components(h, 1);
  REQUIRE(hc.count() == 1);
  const Polygon outer = extract_contour(hc, 1);
  CHECK(is_simple(outer));
  const BinaryMask back = rasterize(std::span<const Polygon>(&outer, 1), 9, 9);
  for (std::size_t i = 0; i < h.pixels.size(); ++i) {
    if (h.pixels[i]) CHECK(back.pixels[i] == 1);
  }
}

TEST_CASE("random regions: contour covers the region with holes filled") {
  std::mt19937_64 rng(19);
  std::bernoulli_distribution on(0.55);
  for (int trial = 0; trial < 30; ++trial) {
    BinaryMask m(14, 14);
    for (int y = 2; y < 12; ++y)
      for (int x = 2; x < 12; ++x) m.at(y, x) = on(rng);
    const Components c = connected_components(m, 1);
    for (int k = 1; k <= c.count(); ++k) {
      const Polygon poly = extract_contour(c, k);
      CHECK(is_simple(poly));
      const BinaryMask back = rasterize(std::span<const Polygon>(&poly, 1), 14, 14);
      const BinaryMask region = region_mask(c, k);
      for (std::size_t i = 0; i < region.pixels.size(); ++i) {
        if (region.pixels[i]) CHECK(back.pixels[i] == 1);
      }
    }
  }
}

TEST_CASE("expand_kernel offsets by area * beta / perimeter") {
  const Polygon kernel = rect(10, 20, 86, 36);  // 76 x 16
  const double offset = 1216.0 * 1.5 / 184.0;
  CHECK(offset == doctest::Approx(9.913).epsilon(1e-4));
  const Polygon grown = expand_kernel(kernel, 1.5);
  double x0 = 1e9, y0 = 1e9, x1 = -1e9, y1 = -1e9;
  for (const Point& p : grown.vertices) {
    x0 = std::min(x0, p.x);
    y0 = std::min(y0, p.y);
    x1 = std::max(x1, p.x);
    y1 = std::max(y1, p.y);
  }
  CHECK(x1 - x0 == doctest::Approx(76 + 2 * offset).epsilon(1e-6));
  CHECK(y1 - y0 == doctest::Approx(16 + 2 * offset).epsilon(1e-6));
  // Rounded corners: between the mitred box and the box minus its corners.
  const double mitred = (76 + 2 * offset) * (16 + 2 * offset);
  CHECK(area(grown) < mitred);
  CHECK(area(grown) > mitred - (4 - 3.14159) * offset * offset - 1.0);
  CHECK(intersection_area(grown, kernel) == doctest::Approx(area(kernel)));

  CHECK(expand_kernel(kernel, 0.0) == canonical(kernel));
  CHECK_THROWS_AS(expand_kernel(kernel, -1.0), GeometryError);
  CHECK_THROWS_AS(expand_kernel(Polygon{{{0, 0}, {1, 1}, {2, 2}}}, 1.5), GeometryError);
}

TEST_CASE("label to detection round trip on a 100x40 rectangle") {
  const Polygon text = rect(30, 40, 130, 80);
  const KernelLabel label = make_kernel_label(std::span<const Polygon>(&text, 1), 0.4, 128, 160);
  const std::vector<Detection> dets = detect(prob_from_mask(label.kernel));
  REQUIRE(dets.size() == 1);
  CHECK(polygon_iou(dets[0].polygon, text) >= 0.8);
  CHECK(dets[0].score == doctest::Approx(0.99));
  CHECK(is_simple(dets[0].polygon));
}

TEST_CASE("detect on synthetic kernel masks") {
  CHECK(detect(Tensor({1, 1, 32, 32}, 0.01)).empty());

  // Three instances of different sizes: one detection each, sorted by score.
  BinaryMask m(64, 96);
  Tensor prob({1, 1, 64, 96}, 0.01);
  const int boxes[3][4] = {{4, 4, 30, 14}, {40, 10, 90, 20}, {10, 40, 60, 56}};
  const double scores[3] = {0.7, 0.95, 0.8};
  for (int b = 0; b < 3; ++b) {
    for (int y = boxes[b][1]; y < boxes[b][3]; ++y)
      for (int x = boxes[b][0]; x < boxes[b][2]; ++x) prob.at(0, 0, y, x) = scores[b];
  }
  const std::vector<Detection> dets = detect(prob);
  REQUIRE(dets.size() == 3);
  CHECK(dets[0].score == doctest::Approx(0.95));
  CHECK(dets[1].score == doctest::Approx(0.8));
  CHECK(dets[2].score == doctest::Approx(0.7));
  for (int b = 0; b < 3; ++b) {
    const Polygon kernel = rect(boxes[b][0], boxes[b][1], boxes[b][2], boxes[b][3]);
    const bool contains = std::any_of(dets.begin(), dets.end(), [&](const Detection& d) {
      return intersection_area(d.polygon, kernel) == doctest::Approx(area(kernel)) &&
             area(d.polygon) > area(kernel);
    });
    CHECK(contains);
  }

  // Two kernels separated by three background pixels stay separate.
  Tensor close({1, 1, 40, 80}, 0.01);
  for (int y = 10; y < 30; ++y) {
    for (int x = 5; x < 35; ++x) close.at(0, 0, y, x) = 0.99;
    for (int x = 38; x < 70; ++x) close.at(0, 0, y, x) = 0.99;
  }
  CHECK(detect(close).size() == 2);

  // Regions below min_area are dropped.
  Tensor tiny({1, 1, 16, 16}, 0.01);
  for (int y = 2; y < 5; ++y)
    for (int x = 2; x < 7; ++x) tiny.at(0, 0, y, x) = 0.9;
  CHECK(detect(tiny).empty());
  DetectParams loose;
  loose.min_area = 15;
  CHECK(detect(tiny, loose).size() == 1);
}

TEST_CASE("detection count is monotone on nested-level masks") {
  // Plateaus nested inside each other: raising the threshold only removes or
  // splits regions along the nesting levels.
  Tensor prob({1, 1, 64, 64}, 0.05);
  auto fill = [&](int x0, int y0, int x1, int y1, double v) {
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) prob.at(0, 0, y, x) = v;
  };
  fill(4, 4, 60, 60, 0.3);
  fill(8, 8, 28, 56, 0.6);
  fill(34, 8, 56, 56, 0.6);
  fill(10, 10, 26, 20, 0.9);
  fill(10, 30, 26, 40, 0.9);
  fill(36, 10, 54, 30, 0.9);
  std::vector<std::size_t> counts;
  for (double thr : {0.1, 0.2, 0.4, 0.5, 0.7, 0.8, 0.95}) {
    counts.push_back(detect(prob, DetectParams{thr, 16, 1.5, 0.5}).size());
  }
  CHECK(counts == std::vector<std::size_t>{1, 1, 2, 2, 3, 3, 0});
}

TEST_CASE("detection file format round trip") {
  std::vector<Detection> dets(2);
  dets[0].polygon = rect(1.5, 2.25, 10, 20);
  dets[0].score = 0.875;
  dets[1].polygon = Polygon{{{0, 0}, {5, 0}, {2.5, 4}}};
  dets[1].score = 0.5;
  const std::string text = format_detections(dets);
  CHECK(text.substr(0, text.find('\n')) ==
        "0.875000;1.500,2.250,10.000,2.250,10.000,20.000,1.500,20.000");
  const std::vector<Detection> back = parse_detections(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].score == 0.875);
  CHECK(back[0].polygon == dets[0].polygon);
  CHECK(back[1].polygon == dets[1].polygon);
  CHECK(parse_detections("").empty());
  CHECK_THROWS_AS(parse_detections("0.5 1,2,3,4,5,6"), ValidationError);
  CHECK_THROWS_AS(parse_detections("0.5;1,2,3,4"), ValidationError);
  CHECK_THROWS_AS(parse_detections("0.5;1,2,x,4,5,6"), ValidationError);
}

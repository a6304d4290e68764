#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "doctest.h"
#include "spotlight/errors.hpp"
#include "spotlight/imageio.hpp"

using namespace spotlight;

namespace {

const std::filesystem::path kFixtures = SPOTLIGHT_FIXTURE_DIR;

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

int changed_pixels(const Image& a, const Image& b) {
  int n = 0;
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      bool diff = false;
      for (int c = 0; c < a.channels; ++c) diff = diff || a.at(x, y, c) != b.at(x, y, c);
      n += diff;
    }
  }
  return n;
}

}  // namespace

TEST_CASE("hand-written PPM fixture decodes to known samples") {
  // The first payload byte is 0x0a, which must not be eaten as header whitespace.
  const Image img = read_image(kFixtures / "tiny.ppm");
  CHECK(img.width == 2);
  CHECK(img.height == 2);
  CHECK(img.channels == 3);
  for (int i = 0; i < 12; ++i) CHECK(img.data[static_cast<std::size_t>(i)] == 10 * (i + 1));
  CHECK(img.at(1, 0, 0) == 40);
  CHECK(img.at(0, 1, 2) == 90);

  const Image gray = read_image(kFixtures / "gray.pgm");
  CHECK(gray.channels == 1);
  CHECK(gray.width == 3);
  CHECK(gray.data == std::vector<std::uint8_t>{0, 128, 255});
}

TEST_CASE("PNM encode/decode round trip") {
  std::mt19937 rng(3);
  for (int channels : {1, 3}) {
    Image img(7, 5, channels);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(rng());
    const auto enc = encode_pnm(img);
    CHECK(decode_pnm(enc) == img);
  }
  const auto tmp = std::filesystem::temp_directory_path() / "spotlight_imageio_rt.ppm";
  const Image fixture = read_image(kFixtures / "tiny.ppm");
  write_image(fixture, tmp);
  CHECK(read_image(tmp) == fixture);
  std::filesystem::remove(tmp);
  CHECK_THROWS_AS(read_image(kFixtures / "does_not_exist.ppm"), IoError);
}

TEST_CASE("malformed PNM input is rejected") {
  CHECK_THROWS_AS(decode_pnm(bytes_of("P3\n1 1\n255\n0 0 0")), ValidationError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("P6\n2 x\n255\n")), ValidationError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("P6\n2 2\n65535\n")), ValidationError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("P6\n2 2\n15\n")), ValidationError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("P6\n2 2\n255\nabc")), ValidationError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("P5\n0 2\n255\n")), ValidationError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("P5\n1 1\n255")), ValidationError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("")), ValidationError);
  CHECK_NOTHROW(decode_pnm(bytes_of("P5 # c\n1 # c\n1\n255\nA")));
}

TEST_CASE("letterbox planning") {
  // Short-side 736 on a 2:1 image.
  for (int scale : {1, 10}) {
    const Letterbox lb = plan_letterbox(100 * scale, 50 * scale, ResizeSpec::shorter_side(736));
    CHECK(lb.resized_width == 1472);
    CHECK(lb.resized_height == 736);
    CHECK(lb.net_width == 1472);
    CHECK(lb.net_height == 736);
    CHECK(lb.pad_left == 0);
    CHECK(lb.pad_top == 0);
  }

  const Letterbox odd = plan_letterbox(33, 70, ResizeSpec::native());
  CHECK(odd.resized_width == 33);
  CHECK(odd.net_width == 64);
  CHECK(odd.net_height == 96);
  CHECK(odd.pad_left == 15);
  CHECK(odd.pad_top == 13);

  const Letterbox exact = plan_letterbox(640, 480, ResizeSpec::exact(1280, 720));
  CHECK(exact.resized_height == 720);
  CHECK(exact.net_height == 736);
  CHECK(exact.pad_top == 8);

  std::mt19937 rng(11);
  std::uniform_int_distribution<int> side(1, 3000), target(32, 1200);
  for (int i = 0; i < 200; ++i) {
    const int w = side(rng), h = side(rng), s = target(rng);
    const Letterbox lb = plan_letterbox(w, h, ResizeSpec::shorter_side(s));
    CHECK(lb.net_width % 32 == 0);
    CHECK(lb.net_height % 32 == 0);
    CHECK(std::min(lb.resized_width, lb.resized_height) == s);
    // Aspect is kept to within one pixel of the long side.
    if (w >= h) {
      CHECK(std::abs(lb.resized_width - static_cast<double>(w) * lb.resized_height / h) <= 1.0);
    } else {
      CHECK(std::abs(lb.resized_height - static_cast<double>(h) * lb.resized_width / w) <= 1.0);
    }
    const Point p{0.37 * w, 0.81 * h};
    const Point back = lb.to_original(lb.to_network(p));
    CHECK(back.x == doctest::Approx(p.x));
    CHECK(back.y == doctest::Approx(p.y));
  }

  CHECK_THROWS_AS(plan_letterbox(0, 10, ResizeSpec::native()), ValidationError);
  CHECK_THROWS_AS(plan_letterbox(10, 10, ResizeSpec::exact(10, 0)), ValidationError);
  CHECK_THROWS_AS(plan_letterbox(10, 10, ResizeSpec::shorter_side(-5)), ValidationError);
}

TEST_CASE("tensor conversion normalizes and pads") {
  const Image fixture = read_image(kFixtures / "tiny.ppm");
  const Normalization identity{{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}};
  const PreparedImage p = to_tensor(fixture, ResizeSpec::native(), identity);
  CHECK(p.tensor.shape() == Shape{1, 3, 32, 32});
  CHECK(p.map.pad_left == 15);
  CHECK(p.map.pad_top == 15);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) {
      for (int c = 0; c < 3; ++c) {
        CHECK(p.tensor.at(0, c, y + 15, x + 15) ==
              doctest::Approx(fixture.at(x, y, c) / 255.0).epsilon(1e-6));
      }
    }
  }
  CHECK(p.tensor.at(0, 0, 0, 0) == 0.0);
  CHECK(p.tensor.at(0, 2, 31, 31) == 0.0);

  // A constant image stays constant after resampling; padding is zero.
  const Image flat(50, 30, 3, 200);
  const Normalization norm;
  const PreparedImage q = to_tensor(flat, ResizeSpec::exact(45, 20), norm);
  CHECK(q.tensor.shape() == Shape{1, 3, 32, 64});
  for (int c = 0; c < 3; ++c) {
    const double want = (200.0 / 255.0 - norm.mean[c]) / norm.std[c];
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 64; ++x) {
        const bool inside = y >= q.map.pad_top && y < q.map.pad_top + 20 &&
                            x >= q.map.pad_left && x < q.map.pad_left + 45;
        CHECK(q.tensor.at(0, c, y, x) == doctest::Approx(inside ? want : 0.0).epsilon(1e-6));
      }
    }
  }

  // Grayscale is replicated to all three channels.
  const Image gray = read_image(kFixtures / "gray.pgm");
  const PreparedImage g = to_tensor(gray, ResizeSpec::native(), identity);
  for (int x = 0; x < 3; ++x) {
    const double v = g.tensor.at(0, 0, g.map.pad_top, g.map.pad_left + x);
    CHECK(v == doctest::Approx(gray.data[static_cast<std::size_t>(x)] / 255.0).epsilon(1e-6));
    CHECK(g.tensor.at(0, 1, g.map.pad_top, g.map.pad_left + x) == v);
    CHECK(g.tensor.at(0, 2, g.map.pad_top, g.map.pad_left + x) == v);
  }

  CHECK_THROWS_AS(to_tensor(Image(0, 4, 3), ResizeSpec::native()), ValidationError);
  CHECK_THROWS_AS(to_tensor(Image(4, 4, 2), ResizeSpec::native()), ValidationError);
}

TEST_CASE("bilinear resize") {
  const Image flat(9, 4, 3, 77);
  const Image up = resize_bilinear(flat, 31, 17);
  for (auto v : up.data) CHECK(v == 77);
  const Image fixture = read_image(kFixtures / "tiny.ppm");
  CHECK(resize_bilinear(fixture, 2, 2) == fixture);
  // Doubling a 2-pixel ramp: outer samples clamp, inner ones interpolate by 1/4.
  Image ramp(2, 1, 1);
  ramp.data = {0, 200};
  const Image wide = resize_bilinear(ramp, 4, 1);
  CHECK(wide.data == std::vector<std::uint8_t>{0, 50, 150, 200});
  CHECK_THROWS_AS(resize_bilinear(flat, 0, 3), ValidationError);
}

TEST_CASE("overlay drawing") {
  const Image base(40, 30, 3, 10);
  CHECK(draw_overlay(base, {}) == base);

  // Outline of a w x h rectangle covers 2(w+h) pixels.
  const int w = 17, h = 9;
  const std::vector<Polygon> box = {Polygon::rectangle(5, 6, 5 + w, 6 + h)};
  const Image drawn = draw_overlay(base, box, {1, 2, 3});
  CHECK(changed_pixels(base, drawn) == 2 * (w + h));
  CHECK(drawn.at(5, 6, 0) == 1);
  CHECK(drawn.at(5 + w, 6 + h, 2) == 3);
  CHECK(drawn.at(10, 10, 0) == 10);

  // Vertices outside the image are clipped; the visible part is still drawn.
  const std::vector<Polygon> big = {Polygon::rectangle(-10, 5, 100, 20)};
  const Image clipped = draw_overlay(base, big);
  CHECK(changed_pixels(base, clipped) == 2 * 40);
  CHECK(clipped.at(0, 5, 0) == 255);
  CHECK(clipped.at(39, 20, 1) == 0);

  // A grayscale canvas takes the first colour component.
  const Image gray(10, 10, 1, 0);
  const std::vector<Polygon> diag = {Polygon{{{0, 0}, {9, 9}, {0, 9}}}};
  const Image g = draw_overlay(gray, diag, {99, 0, 0});
  CHECK(g.at(4, 4) == 99);
  CHECK(g.at(0, 5) == 99);
  CHECK(g.at(5, 0) == 0);
}

TEST_CASE("masks convert to grayscale images") {
  BinaryMask m(2, 3);
  m.at(1, 2) = 1;
  const Image img = mask_to_image(m);
  CHECK(img.channels == 1);
  CHECK(img.width == 3);
  CHECK(img.data == std::vector<std::uint8_t>{0, 0, 0, 0, 0, 255});
}

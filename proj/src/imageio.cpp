#include "spotlight/imageio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "spotlight/errors.hpp"
#include "spotlight/fileio.hpp"

namespace spotlight {

Image::Image(int w, int h, int c, std::uint8_t fill)
    : width(w), height(h), channels(c),
      data(static_cast<std::size_t>(w) * h * c, fill) {}

namespace {

class HeaderScanner {
 public:
  explicit HeaderScanner(std::span<const std::uint8_t> b) : bytes_(b) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = static_cast<char>(bytes_[pos_]);
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  int number(const char* what) {
    skip_space_and_comments();
    long value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1 << 20) throw ValidationError(std::string("PNM ") + what + " too large");
      ++pos_;
      ++digits;
    }
    if (digits == 0) throw ValidationError(std::string("malformed PNM header: bad ") + what);
    return static_cast<int>(value);
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Image decode_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw ValidationError("not a binary PGM/PPM file");
  }
  const int channels = bytes[1] == '5' ? 1 : 3;
  HeaderScanner scan(bytes);
  scan.advance(2);
  const int width = scan.number("width");
  const int height = scan.number("height");
  const int maxval = scan.number("maxval");
  if (width <= 0 || height <= 0) throw ValidationError("PNM has zero size");
  if (maxval != 255) {
    throw ValidationError("unsupported PNM maxval " + std::to_string(maxval));
  }
  if (scan.pos() >= bytes.size() || !std::isspace(bytes[scan.pos()])) {
    throw ValidationError("malformed PNM header");
  }
  scan.advance(1);
  Image img(width, height, channels);
  if (bytes.size() - scan.pos() < img.data.size()) throw ValidationError("truncated PNM payload");
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(scan.pos()), img.data.size(),
              img.data.begin());
  return img;
}

std::vector<std::uint8_t> encode_pnm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw ValidationError("images must have 1 or 3 channels");
  }
  const std::string header = std::string(image.channels == 1 ? "P5" : "P6") + "\n" +
                             std::to_string(image.width) + " " +
                             std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.data.begin(), image.data.end());
  return out;
}

Image read_image(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_pnm(bytes);
}

void write_image(const Image& image, const std::filesystem::path& path) {
  write_file_atomic(path, encode_pnm(image));
}

Image mask_to_image(const BinaryMask& mask) {
  Image img(mask.width, mask.height, 1);
  for (std::size_t i = 0; i < mask.pixels.size(); ++i) img.data[i] = mask.pixels[i] ? 255 : 0;
  return img;
}

Point Letterbox::to_original(Point p) const {
  const double sx = static_cast<double>(original_width) / resized_width;
  const double sy = static_cast<double>(original_height) / resized_height;
  return {(p.x - pad_left) * sx, (p.y - pad_top) * sy};
}

Polygon Letterbox::to_original(const Polygon& poly) const {
  Polygon out;
  out.vertices.reserve(poly.vertices.size());
  for (const Point& p : poly.vertices) out.vertices.push_back(to_original(p));
  return out;
}

Point Letterbox::to_network(Point p) const {
  const double sx = static_cast<double>(resized_width) / original_width;
  const double sy = static_cast<double>(resized_height) / original_height;
  return {p.x * sx + pad_left, p.y * sy + pad_top};
}

Polygon Letterbox::to_network(const Polygon& poly) const {
  Polygon out;
  out.vertices.reserve(poly.vertices.size());
  for (const Point& p : poly.vertices) out.vertices.push_back(to_network(p));
  return out;
}

Letterbox plan_letterbox(int width, int height, const ResizeSpec& spec) {
  if (width <= 0 || height <= 0) throw ValidationError("image has zero size");
  Letterbox lb;
  lb.original_width = width;
  lb.original_height = height;
  if (spec.short_side > 0) {
    const double scale = static_cast<double>(spec.short_side) / std::min(width, height);
    lb.resized_width = std::max(1, static_cast<int>(std::lround(width * scale)));
    lb.resized_height = std::max(1, static_cast<int>(std::lround(height * scale)));
  } else if (spec.width > 0 || spec.height > 0) {
    if (spec.width <= 0 || spec.height <= 0) throw ValidationError("target size must be positive");
    lb.resized_width = spec.width;
    lb.resized_height = spec.height;
  } else if (spec.short_side < 0 || spec.width < 0 || spec.height < 0) {
    throw ValidationError("target size must be positive");
  } else {
    lb.resized_width = width;
    lb.resized_height = height;
  }
  const auto up32 = [](int v) { return (v + 31) / 32 * 32; };
  lb.net_width = up32(lb.resized_width);
  lb.net_height = up32(lb.resized_height);
  lb.pad_left = (lb.net_width - lb.resized_width) / 2;
  lb.pad_top = (lb.net_height - lb.resized_height) / 2;
  return lb;
}

namespace {

struct Tap {
  int i0, i1;
  double w1;  // weight of i1
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - i0};
  }
  return taps;
}

// Resampled value of channel c at output (x, y), in [0, 255].
template <typename Fn>
void resample(const Image& img, int out_w, int out_h, Fn&& emit) {
  const auto tx = bilinear_taps(img.width, out_w);
  const auto ty = bilinear_taps(img.height, out_h);
  for (int y = 0; y < out_h; ++y) {
    const Tap& a = ty[y];
    for (int x = 0; x < out_w; ++x) {
      const Tap& b = tx[x];
      for (int c = 0; c < img.channels; ++c) {
        const double top = img.at(b.i0, a.i0, c) * (1 - b.w1) + img.at(b.i1, a.i0, c) * b.w1;
        const double bot = img.at(b.i0, a.i1, c) * (1 - b.w1) + img.at(b.i1, a.i1, c) * b.w1;
        emit(x, y, c, top * (1 - a.w1) + bot * a.w1);
      }
    }
  }
}

}  // namespace

Image resize_bilinear(const Image& image, int width, int height) {
  if (width <= 0 || height <= 0) throw ValidationError("target size must be positive");
  Image out(width, height, image.channels);
  resample(image, width, height, [&](int x, int y, int c, double v) {
    out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  });
  return out;
}

PreparedImage to_tensor(const Image& image, const ResizeSpec& spec, const Normalization& norm) {
  if (image.channels != 1 && image.channels != 3) {
    throw ValidationError("images must have 1 or 3 channels");
  }
  PreparedImage out;
  out.map = plan_letterbox(image.width, image.height, spec);
  const Letterbox& lb = out.map;
  out.tensor = Tensor({1, 3, lb.net_height, lb.net_width});
  Tensor& t = out.tensor;
  resample(image, lb.resized_width, lb.resized_height, [&](int x, int y, int c, double v) {
    const double unit = v / 255.0;
    const int first = image.channels == 1 ? 0 : c;
    const int last = image.channels == 1 ? 2 : c;
    for (int k = first; k <= last; ++k) {
      t.at(0, k, y + lb.pad_top, x + lb.pad_left) = (unit - norm.mean[k]) / norm.std[k];
    }
  });
  return out;
}

Image draw_overlay(const Image& image, std::span<const Polygon> polygons,
                   std::array<std::uint8_t, 3> color) {
  Image out = image;
  const auto plot = [&](long x, long y) {
    if (x < 0 || y < 0 || x >= out.width || y >= out.height) return;
    for (int c = 0; c < out.channels; ++c) {
      out.at(static_cast<int>(x), static_cast<int>(y), c) =
          out.channels == 1 ? color[0] : color[static_cast<std::size_t>(c)];
    }
  };
  for (const Polygon& poly : polygons) {
    const std::size_t n = poly.vertices.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Point& p = poly.vertices[i];
      const Point& q = poly.vertices[(i + 1) % n];
      long x0 = std::lround(p.x), y0 = std::lround(p.y);
      const long x1 = std::lround(q.x), y1 = std::lround(q.y);
      const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
      const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
      long err = dx + dy;
      while (true) {
        plot(x0, y0);
        if (x0 == x1 && y0 == y1) break;
        const long e2 = 2 * err;
        if (e2 >= dy) {
          err += dy;
          x0 += sx;
        }
        if (e2 <= dx) {
          err += dx;
          y0 += sy;
        }
      }
    }
  }
  return out;
}

}  // namespace spotlight

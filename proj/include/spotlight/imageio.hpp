#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "spotlight/geometry.hpp"
#include "spotlight/tensor.hpp"

namespace spotlight {

/// 8-bit raster, row-major, channels interleaved.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0);
  std::uint8_t& at(int x, int y, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

/// Binary PGM (P5) or PPM (P6) with maxval 255. Throws ValidationError.
Image decode_pnm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pnm(const Image& image);
Image read_image(const std::filesystem::path& path);
void write_image(const Image& image, const std::filesystem::path& path);

Image mask_to_image(const BinaryMask& mask);

struct Normalization {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};
};

/// How an image is brought to network size. Exact mode resizes to the given
/// width and height; short-side mode scales so the shorter side equals
/// `short_side`, preserving aspect. Either way the result is zero-padded
/// symmetrically up to multiples of 32.
struct ResizeSpec {
  int width = 0;
  int height = 0;
  int short_side = 0;  // takes precedence when positive

  static ResizeSpec exact(int w, int h) { return {w, h, 0}; }
  static ResizeSpec shorter_side(int s) { return {0, 0, s}; }
  static ResizeSpec native() { return {}; }  // keep size, pad only
};

/// Records how network-input coordinates relate to the original image.
struct Letterbox {
  int original_width = 0, original_height = 0;
  int resized_width = 0, resized_height = 0;
  int net_width = 0, net_height = 0;
  int pad_left = 0, pad_top = 0;

  Point to_original(Point p) const;
  Polygon to_original(const Polygon& poly) const;
  Point to_network(Point p) const;
  Polygon to_network(const Polygon& poly) const;
};

Letterbox plan_letterbox(int width, int height, const ResizeSpec& spec);

struct PreparedImage {
  Tensor tensor;  // (1,3,net_height,net_width)
  Letterbox map;
};

/// Bilinear resize with half-pixel centres, scale to [0,1], normalize,
/// zero-pad. Grayscale input is replicated to three channels.
PreparedImage to_tensor(const Image& image, const ResizeSpec& spec,
                        const Normalization& norm = {});

Image resize_bilinear(const Image& image, int width, int height);

/// Copy of `image` with polygon outlines drawn by Bresenham lines; pixels
/// outside the image are skipped.
Image draw_overlay(const Image& image, std::span<const Polygon> polygons,
                   std::array<std::uint8_t, 3> color = {255, 0, 0});

}  // namespace spotlight

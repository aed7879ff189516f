#pragma once

#include "kgs/common.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace kgs {

/// Linear RGB image, row-major top-to-bottom, three doubles per pixel.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, double fill = 0.0) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::size_t index(int x, int y) const { return (static_cast<std::size_t>(y) * width + x) * 3; }
  double& at(int x, int y, int c) { return data[index(x, y) + c]; }
  double at(int x, int y, int c) const { return data[index(x, y) + c]; }
  bool same_shape(const Image& o) const { return width == o.width && height == o.height; }
};

/// 8-bit RGB image as stored on disk.
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  bool operator==(const Image8&) const = default;
};

Image8 quantize(const Image& img);
Image to_float(const Image8& img);

void write_ppm(const std::filesystem::path& path, const Image8& img);
Image8 read_ppm(const std::filesystem::path& path);

}  // namespace kgs

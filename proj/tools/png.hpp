#pragma once

// Minimal RGB raster with PNG output (zlib deflate), for BEV renders and
// histogram plots.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace v2x::cli {

using Rgb = std::array<std::uint8_t, 3>;

class Image {
 public:
  Image(int width, int height, Rgb fill = {255, 255, 255});

  int width() const { return width_; }
  int height() const { return height_; }

  void set(int x, int y, Rgb c);
  Rgb get(int x, int y) const;
  void fill_rect(int x0, int y0, int x1, int y1, Rgb c);
  /// Bresenham, clipped to the image.
  void line(int x0, int y0, int x1, int y1, Rgb c);

  std::string encode_png() const;
  void save_png(const std::filesystem::path& path) const;

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> pixels_;
};

/// Bar chart of `values`, one bar per entry, scaled to the largest value.
Image bar_chart(const std::vector<double>& values, int width = 640, int height = 360, Rgb color = {52, 101, 164});

}  // namespace v2x::cli

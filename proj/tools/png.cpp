#include "png.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <stdexcept>

namespace v2x::cli {

Image::Image(int width, int height, Rgb fill) : width_(width), height_(height) {
  if (width < 1 || height < 1) throw std::invalid_argument("image size must be positive");
  pixels_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < pixels_.size(); i += 3) std::copy(fill.begin(), fill.end(), pixels_.begin() + i);
}

void Image::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
  std::copy(c.begin(), c.end(), pixels_.begin() + (static_cast<std::size_t>(y) * width_ + x) * 3);
}

Rgb Image::get(int x, int y) const {
  const auto* p = pixels_.data() + (static_cast<std::size_t>(y) * width_ + x) * 3;
  return {p[0], p[1], p[2]};
}

void Image::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
  for (int y = std::max(0, y0); y <= std::min(height_ - 1, y1); ++y) {
    for (int x = std::max(0, x0); x <= std::min(width_ - 1, x1); ++x) set(x, y, c);
  }
}

void Image::line(int x0, int y0, int x1, int y1, Rgb c) {
  const int dx = std::abs(x1 - x0);
  const int dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1;
  const int sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  // long lines far outside the canvas are not worth walking
  for (int guard = 0; guard < 20000; ++guard) {
    set(x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
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

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

void chunk(std::string& out, const char* type, const std::string& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  put_u32(out, static_cast<std::uint32_t>(crc32(0, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

}  // namespace

std::string Image::encode_png() const {
  std::string raw;
  raw.reserve(static_cast<std::size_t>(height_) * (width_ * 3 + 1));
  for (int y = 0; y < height_; ++y) {
    raw.push_back(0);  // filter: none
    raw.append(reinterpret_cast<const char*>(pixels_.data()) + static_cast<std::size_t>(y) * width_ * 3,
               static_cast<std::size_t>(width_) * 3);
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::string packed(packed_size, '\0');
  if (compress2(reinterpret_cast<Bytef*>(packed.data()), &packed_size, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw std::runtime_error("zlib compression failed");
  }
  packed.resize(packed_size);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(width_));
  put_u32(ihdr, static_cast<std::uint32_t>(height_));
  ihdr += std::string("\x08\x02\x00\x00\x00", 5);  // 8-bit RGB, no interlace
  chunk(out, "IHDR", ihdr);
  chunk(out, "IDAT", packed);
  chunk(out, "IEND", "");
  return out;
}

void Image::save_png(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << encode_png();
}

Image bar_chart(const std::vector<double>& values, int width, int height, Rgb color) {
  Image img(width, height);
  const int margin = 20;
  img.line(margin, height - margin, width - margin, height - margin, {0, 0, 0});
  img.line(margin, margin, margin, height - margin, {0, 0, 0});
  if (values.empty()) return img;
  const double top = std::max(1e-12, *std::max_element(values.begin(), values.end()));
  const double slot = static_cast<double>(width - 2 * margin) / static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int h = static_cast<int>(std::lround(std::max(0.0, values[i]) / top * (height - 2 * margin - 1)));
    const int x0 = margin + static_cast<int>(slot * static_cast<double>(i) + slot * 0.15);
    const int x1 = margin + static_cast<int>(slot * static_cast<double>(i + 1) - slot * 0.15);
    img.fill_rect(x0, height - margin - h, x1, height - margin - 1, color);
  }
  return img;
}

}  // namespace v2x::cli

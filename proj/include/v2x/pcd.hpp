#pragma once

// PCD v0.7 point clouds, DATA ascii or binary (little-endian).

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>

#include "v2x/geometry.hpp"

namespace v2x {

enum class PcdEncoding { Ascii, Binary };

struct PcdLoadInfo {
  std::size_t points_in_file = 0;
  std::size_t dropped_nan = 0;
  PcdEncoding encoding = PcdEncoding::Ascii;
};

/// Reads x, y, z and, when present, intensity. Other fields are skipped.
/// Rows with a non-finite coordinate are dropped and counted.
PointCloud parse_pcd(std::string_view bytes, PcdLoadInfo* info = nullptr);
PointCloud load_point_cloud(const std::filesystem::path& path, PcdLoadInfo* info = nullptr);

std::string encode_pcd(const PointCloud& cloud, PcdEncoding encoding);
void save_point_cloud(const std::filesystem::path& path, const PointCloud& cloud, PcdEncoding encoding);

}  // namespace v2x

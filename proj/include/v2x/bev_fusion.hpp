#pragma once

// Bird's-eye-view pillar grids, max-fusion of two grids and a clustering
// detector that stands in for a learned detection head.

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

#include "v2x/geometry.hpp"

namespace v2x {

struct GridConfig {
  Eigen::Vector2d x_range{-75.0, 75.0};
  Eigen::Vector2d y_range{-75.0, 75.0};
  Eigen::Vector2d z_range{-8.0, 0.0};
  double cell_size = 150.0 / 512.0;

  int nx() const;
  int ny() const;
  bool operator==(const GridConfig&) const = default;
};

/// Throws ConfigError on empty ranges, non-positive cells or more than 4096
/// cells per axis.
void validate(const GridConfig& config);

/// Per-cell aggregates. Arrays are indexed (ix, iy); empty cells hold zeros.
struct BEVGrid {
  GridConfig config;
  std::string frame_id;
  Eigen::ArrayXXi count;
  Eigen::ArrayXXd max_z;
  Eigen::ArrayXXd mean_z;
  Eigen::ArrayXXd mean_intensity;
  Eigen::Index dropped_points = 0;  ///< input points outside the ranges

  static BEVGrid zeros(const GridConfig& config, std::string frame_id = {});
  Eigen::Index total_points() const { return count.cast<Eigen::Index>().sum(); }
  Eigen::Vector2d cell_center(int ix, int iy) const;
};

/// Points with x in [x0, x1), y in [y0, y1), z in [z0, z1] are binned; the
/// rest are counted in dropped_points.
BEVGrid pillarize(const PointCloud& cloud, const GridConfig& config = {});

/// Element-wise max over populated cells, counts summed. A cell populated in
/// only one grid keeps that grid's values, so fusing with an empty grid is
/// the identity.
BEVGrid max_fuse(const BEVGrid& a, const BEVGrid& b);

enum class DetectionSource { Vehicle, Infra, Cooperative };

std::string_view to_string(DetectionSource s);

struct Detection {
  Box3D box;  ///< score set, in (0, 1]
  DetectionSource source = DetectionSource::Cooperative;
};

struct DetectorParams {
  int min_points = 1;   ///< per cell
  int min_cells = 2;    ///< per component
  double score_scale = 50.0;  ///< score = 1 - exp(-points / score_scale)
  std::optional<double> ground_z;  ///< box bottom; grid z minimum when unset
};

/// Size-based category guess for a fitted box.
Category classify_by_size(const Eigen::Vector3d& dimensions);

/// Occupied cells -> 8-connected components -> oriented boxes. Components are
/// emitted in scan order of their first cell.
std::vector<Detection> detect_from_grid(const BEVGrid& grid, const DetectorParams& params = {},
                                        DetectionSource source = DetectionSource::Cooperative);
std::vector<Detection> detect_from_grid(const BEVGrid& grid, int min_points, int min_cells);

/// Greedy box-level fusion: detections are visited by descending score and
/// each absorbs the nearest unvisited detection of the other set within
/// merge_dist (BEV center distance).
std::vector<Detection> late_fuse(const std::vector<Detection>& a, const std::vector<Detection>& b,
                                 double merge_dist);

struct FusionResult {
  std::vector<Detection> detections;
  BEVGrid grid;  ///< fused grid, infrastructure frame
  Eigen::Index vehicle_dropped = 0;
  Eigen::Index infra_dropped = 0;
};

/// Vehicle cloud -> infrastructure frame -> pillarize both -> max_fuse ->
/// detect. Points outside the infrastructure grid are dropped and counted.
FusionResult cooperative_detect(const PointCloud& vehicle_cloud, const PointCloud& infra_cloud, const Pose& t_vi,
                                const GridConfig& config = {}, const DetectorParams& params = {});

/// Single-sensor baseline in the grid frame. `to_grid` maps the cloud into it.
std::vector<Detection> single_source_detect(const PointCloud& cloud, const Pose& to_grid, DetectionSource source,
                                            const GridConfig& config = {}, const DetectorParams& params = {});

}  // namespace v2x

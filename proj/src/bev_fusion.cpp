#include "v2x/bev_fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace v2x {

namespace {

int cells_along(const Eigen::Vector2d& range, double cell) {
  return static_cast<int>(std::ceil((range(1) - range(0)) / cell - 1e-9));
}

}  // namespace

int GridConfig::nx() const { return cells_along(x_range, cell_size); }
int GridConfig::ny() const { return cells_along(y_range, cell_size); }

void validate(const GridConfig& config) {
  if (!config.x_range.allFinite() || !config.y_range.allFinite() || !config.z_range.allFinite()) {
    throw ConfigError("grid ranges must be finite");
  }
  if (!(config.x_range(1) > config.x_range(0)) || !(config.y_range(1) > config.y_range(0)) ||
      !(config.z_range(1) > config.z_range(0))) {
    throw ConfigError("grid ranges must be non-empty");
  }
  if (!(config.cell_size > 0) || !std::isfinite(config.cell_size)) throw ConfigError("cell_size must be positive");
  const double nx = (config.x_range(1) - config.x_range(0)) / config.cell_size;
  const double ny = (config.y_range(1) - config.y_range(0)) / config.cell_size;
  if (nx > 4096 + 1e-9 || ny > 4096 + 1e-9) throw ConfigError("grid exceeds 4096 cells per axis");
}

BEVGrid BEVGrid::zeros(const GridConfig& config, std::string frame_id) {
  validate(config);
  BEVGrid g;
  g.config = config;
  g.frame_id = std::move(frame_id);
  const int nx = config.nx();
  const int ny = config.ny();
  g.count = Eigen::ArrayXXi::Zero(nx, ny);
  g.max_z = Eigen::ArrayXXd::Zero(nx, ny);
  g.mean_z = Eigen::ArrayXXd::Zero(nx, ny);
  g.mean_intensity = Eigen::ArrayXXd::Zero(nx, ny);
  return g;
}

Eigen::Vector2d BEVGrid::cell_center(int ix, int iy) const {
  return {config.x_range(0) + (ix + 0.5) * config.cell_size, config.y_range(0) + (iy + 0.5) * config.cell_size};
}

BEVGrid pillarize(const PointCloud& cloud, const GridConfig& config) {
  BEVGrid g = BEVGrid::zeros(config, cloud.frame_id);
  const int nx = g.count.rows();
  const int ny = g.count.cols();
  const bool with_i = cloud.has_intensity();
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    const Eigen::Vector3d p = cloud.points.col(i);
    if (!p.allFinite() || p.z() < config.z_range(0) || p.z() > config.z_range(1)) {
      ++g.dropped_points;
      continue;
    }
    const double fx = std::floor((p.x() - config.x_range(0)) / config.cell_size);
    const double fy = std::floor((p.y() - config.y_range(0)) / config.cell_size);
    if (p.x() < config.x_range(0) || p.x() >= config.x_range(1) || p.y() < config.y_range(0) ||
        p.y() >= config.y_range(1) || fx < 0 || fy < 0 || fx >= nx || fy >= ny) {
      ++g.dropped_points;
      continue;
    }
    const int ix = static_cast<int>(fx);
    const int iy = static_cast<int>(fy);
    int& c = g.count(ix, iy);
    // running means keep the reduction order fixed (input order)
    ++c;
    g.max_z(ix, iy) = c == 1 ? p.z() : std::max(g.max_z(ix, iy), p.z());
    g.mean_z(ix, iy) += (p.z() - g.mean_z(ix, iy)) / c;
    if (with_i) g.mean_intensity(ix, iy) += (cloud.intensity(i) - g.mean_intensity(ix, iy)) / c;
  }
  return g;
}

BEVGrid max_fuse(const BEVGrid& a, const BEVGrid& b) {
  if (!(a.config == b.config)) throw ConfigError("cannot fuse grids with different configurations");
  if (!frames_match(a.frame_id, b.frame_id)) {
    throw FrameError("cannot fuse grids in frames '" + a.frame_id + "' and '" + b.frame_id + "'");
  }
  BEVGrid out = a;
  out.frame_id = a.frame_id.empty() ? b.frame_id : a.frame_id;
  out.count = a.count + b.count;
  out.dropped_points = a.dropped_points + b.dropped_points;
  const auto pa = a.count > 0;
  const auto pb = b.count > 0;
  auto fuse = [&](const Eigen::ArrayXXd& x, const Eigen::ArrayXXd& y) -> Eigen::ArrayXXd {
    return (pa && pb).select(x.max(y), pa.select(x, pb.select(y, 0.0)));
  };
  out.max_z = fuse(a.max_z, b.max_z);
  out.mean_z = fuse(a.mean_z, b.mean_z);
  out.mean_intensity = fuse(a.mean_intensity, b.mean_intensity);
  return out;
}

std::string_view to_string(DetectionSource s) {
  switch (s) {
    case DetectionSource::Vehicle: return "vehicle";
    case DetectionSource::Infra: return "infra";
    case DetectionSource::Cooperative: return "cooperative";
  }
  return "cooperative";
}

Category classify_by_size(const Eigen::Vector3d& d) {
  const double l = d.x();
  const double w = d.y();
  const double h = d.z();
  if (l < 1.2) return Category::Pedestrian;
  // a bicycle footprint is long and thin; a blob this short is a person
  if (l < 2.0) return l >= 1.6 * w ? Category::Bicycle : Category::Pedestrian;
  if (l < 2.6) return Category::Motorcycle;
  if (l < 6.0) return h >= 2.0 ? Category::Van : Category::Car;
  if (l < 10.5) return Category::Truck;
  return Category::Bus;
}

std::vector<Detection> detect_from_grid(const BEVGrid& grid, const DetectorParams& params, DetectionSource source) {
  std::vector<Detection> out;
  const int nx = grid.count.rows();
  const int ny = grid.count.cols();
  const double cell = grid.config.cell_size;
  const double ground = params.ground_z.value_or(grid.config.z_range(0));
  auto occupied = [&](int x, int y) { return grid.count(x, y) >= std::max(1, params.min_points); };

  Eigen::ArrayXXi label = Eigen::ArrayXXi::Constant(nx, ny, -1);
  std::vector<std::pair<int, int>> stack;
  std::vector<std::pair<int, int>> members;
  int next_label = 0;
  for (int x0 = 0; x0 < nx; ++x0) {
    for (int y0 = 0; y0 < ny; ++y0) {
      if (label(x0, y0) >= 0 || !occupied(x0, y0)) continue;
      members.clear();
      stack.assign(1, {x0, y0});
      label(x0, y0) = next_label;
      while (!stack.empty()) {
        const auto [x, y] = stack.back();
        stack.pop_back();
        members.emplace_back(x, y);
        for (int dx = -1; dx <= 1; ++dx) {
          for (int dy = -1; dy <= 1; ++dy) {
            const int u = x + dx;
            const int v = y + dy;
            if (u < 0 || v < 0 || u >= nx || v >= ny || label(u, v) >= 0 || !occupied(u, v)) continue;
            label(u, v) = next_label;
            stack.emplace_back(u, v);
          }
        }
      }
      ++next_label;
      if (static_cast<int>(members.size()) < params.min_cells) continue;
      std::sort(members.begin(), members.end());

      Eigen::Matrix3Xd centers(3, static_cast<Eigen::Index>(members.size()));
      long points = 0;
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < members.size(); ++k) {
        const auto [x, y] = members[k];
        centers.col(static_cast<Eigen::Index>(k)) << grid.cell_center(x, y), 0.0;
        points += grid.count(x, y);
        top = std::max(top, grid.max_z(x, y));
      }
      Box3D box;
      if (members.size() >= 5) {
        box = fit_oriented_box(centers);
      } else {
        const Eigen::Vector3d lo = centers.rowwise().minCoeff();
        const Eigen::Vector3d hi = centers.rowwise().maxCoeff();
        box.center = (lo + hi) / 2;
        box.dimensions = (hi - lo).cwiseMax(1e-3);
        box.yaw = 0.0;
        if (box.dimensions.y() > box.dimensions.x()) {
          std::swap(box.dimensions.x(), box.dimensions.y());
          box.yaw = normalize_angle(kPi / 2);
        }
      }
      box.dimensions.x() += cell;
      box.dimensions.y() += cell;
      const double bottom = std::min(ground, top - 0.1);
      box.dimensions.z() = top - bottom;
      box.center.z() = (top + bottom) / 2;
      box.category = classify_by_size(box.dimensions);
      box.score = 1.0 - std::exp(-static_cast<double>(points) / params.score_scale);
      box.frame_id = grid.frame_id;
      box.attributes["num_points"] = static_cast<double>(points);
      out.push_back({std::move(box), source});
    }
  }
  return out;
}

std::vector<Detection> detect_from_grid(const BEVGrid& grid, int min_points, int min_cells) {
  DetectorParams p;
  p.min_points = min_points;
  p.min_cells = min_cells;
  return detect_from_grid(grid, p);
}

std::vector<Detection> late_fuse(const std::vector<Detection>& a, const std::vector<Detection>& b, double merge_dist) {
  struct Ref {
    int set;
    std::size_t index;
    const Detection* det;
  };
  std::vector<Ref> all;
  for (std::size_t i = 0; i < a.size(); ++i) all.push_back({0, i, &a[i]});
  for (std::size_t i = 0; i < b.size(); ++i) all.push_back({1, i, &b[i]});
  std::stable_sort(all.begin(), all.end(), [](const Ref& x, const Ref& y) {
    return x.det->box.score.value_or(0) > y.det->box.score.value_or(0);
  });
  std::vector<bool> used(all.size(), false);
  std::vector<Detection> out;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (used[i]) continue;
    used[i] = true;
    std::size_t best = all.size();
    double best_d = merge_dist;
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      if (used[j] || all[j].set == all[i].set) continue;
      const double d = bev_center_distance(all[i].det->box, all[j].det->box);
      if (d <= best_d && (best == all.size() || d < best_d)) {
        best = j;
        best_d = d;
      }
    }
    Detection d = *all[i].det;
    if (best != all.size()) {
      used[best] = true;
      d.source = DetectionSource::Cooperative;
      d.box.score = std::max(d.box.score.value_or(0), all[best].det->box.score.value_or(0));
    }
    out.push_back(std::move(d));
  }
  return out;
}

FusionResult cooperative_detect(const PointCloud& vehicle_cloud, const PointCloud& infra_cloud, const Pose& t_vi,
                                const GridConfig& config, const DetectorParams& params) {
  if (!frames_match(t_vi.source_frame, vehicle_cloud.frame_id) || !frames_match(t_vi.target_frame, infra_cloud.frame_id)) {
    throw FrameError("vehicle -> infrastructure transform does not match the cloud frames");
  }
  PointCloud moved = transform_points(vehicle_cloud, t_vi);
  moved.frame_id = infra_cloud.frame_id;
  const BEVGrid gv = pillarize(moved, config);
  const BEVGrid gi = pillarize(infra_cloud, config);
  FusionResult out;
  out.vehicle_dropped = gv.dropped_points;
  out.infra_dropped = gi.dropped_points;
  out.grid = max_fuse(gi, gv);
  out.detections = detect_from_grid(out.grid, params, DetectionSource::Cooperative);
  return out;
}

std::vector<Detection> single_source_detect(const PointCloud& cloud, const Pose& to_grid, DetectionSource source,
                                            const GridConfig& config, const DetectorParams& params) {
  PointCloud moved = transform_points(cloud, to_grid);
  if (!to_grid.target_frame.empty()) moved.frame_id = to_grid.target_frame;
  return detect_from_grid(pillarize(moved, config), params, source);
}

}  // namespace v2x

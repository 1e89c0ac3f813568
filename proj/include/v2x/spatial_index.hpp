#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

namespace v2x {

/// Static 3D k-d tree over the columns of a point matrix. Queries are exact.
/// The tree keeps a copy of the points, so the source may go out of scope.
class KdTree {
 public:
  struct Neighbor {
    Eigen::Index index = -1;
    double squared_distance = std::numeric_limits<double>::infinity();
  };

  KdTree() = default;
  explicit KdTree(const Eigen::Matrix3Xd& points);

  Eigen::Index size() const { return points_.cols(); }

  /// Nearest point within `max_distance`; ties resolve to the lowest index.
  std::optional<Neighbor> nearest(const Eigen::Vector3d& query,
                                  double max_distance = std::numeric_limits<double>::infinity()) const;

  /// Every point within `radius`, sorted by index.
  std::vector<Eigen::Index> radius_search(const Eigen::Vector3d& query, double radius) const;

 private:
  struct Node {
    std::int32_t begin;
    std::int32_t end;
    std::int32_t left = -1;
    std::int32_t right = -1;
    int axis = -1;  ///< -1 for leaves
    double split = 0.0;
  };

  std::int32_t build(std::int32_t begin, std::int32_t end);
  void nearest_rec(std::int32_t node, const Eigen::Vector3d& q, Neighbor& best) const;
  void radius_rec(std::int32_t node, const Eigen::Vector3d& q, double r2,
                  std::vector<Eigen::Index>& out) const;

  Eigen::Matrix3Xd points_;
  std::vector<Eigen::Index> order_;
  std::vector<Node> nodes_;
};

}  // namespace v2x

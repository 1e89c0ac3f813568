#include "v2x/spatial_index.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace v2x {

namespace {
constexpr std::int32_t kLeafSize = 12;
}

KdTree::KdTree(const Eigen::Matrix3Xd& points) : points_(points) {
  order_.resize(static_cast<std::size_t>(points_.cols()));
  std::iota(order_.begin(), order_.end(), Eigen::Index{0});
  if (!order_.empty()) {
    nodes_.reserve(2 * order_.size() / kLeafSize + 2);
    build(0, static_cast<std::int32_t>(order_.size()));
  }
}

std::int32_t KdTree::build(std::int32_t begin, std::int32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= kLeafSize) return id;

  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (std::int32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_.col(order_[static_cast<std::size_t>(i)]));
    hi = hi.cwiseMax(points_.col(order_[static_cast<std::size_t>(i)]));
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi(axis) - lo(axis) <= 0.0) return id;  // all points coincide

  const std::int32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](Eigen::Index a, Eigen::Index b) { return points_(axis, a) < points_(axis, b); });
  const double split = points_(axis, order_[static_cast<std::size_t>(mid)]);
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  Node& node = nodes_[static_cast<std::size_t>(id)];
  node.axis = axis;
  node.split = split;
  node.left = left;
  node.right = right;
  return id;
}

std::optional<KdTree::Neighbor> KdTree::nearest(const Eigen::Vector3d& query, double max_distance) const {
  if (nodes_.empty()) return std::nullopt;
  Neighbor best;
  best.squared_distance = max_distance == std::numeric_limits<double>::infinity()
                              ? std::numeric_limits<double>::infinity()
                              : max_distance * max_distance;
  // inclusive gate: nudge so a point exactly on the gate is still accepted
  best.squared_distance = std::nextafter(best.squared_distance, std::numeric_limits<double>::infinity());
  nearest_rec(0, query, best);
  if (best.index < 0) return std::nullopt;
  return best;
}

void KdTree::nearest_rec(std::int32_t id, const Eigen::Vector3d& q, Neighbor& best) const {
  const Node& node = nodes_[static_cast<std::size_t>(id)];
  if (node.axis < 0) {
    for (std::int32_t i = node.begin; i < node.end; ++i) {
      const Eigen::Index idx = order_[static_cast<std::size_t>(i)];
      const double d2 = (points_.col(idx) - q).squaredNorm();
      if (d2 < best.squared_distance || (d2 == best.squared_distance && best.index >= 0 && idx < best.index)) {
        best.squared_distance = d2;
        best.index = idx;
      }
    }
    return;
  }
  const double diff = q(node.axis) - node.split;
  const std::int32_t near = diff < 0 ? node.left : node.right;
  const std::int32_t far = diff < 0 ? node.right : node.left;
  nearest_rec(near, q, best);
  if (diff * diff <= best.squared_distance) nearest_rec(far, q, best);
}

std::vector<Eigen::Index> KdTree::radius_search(const Eigen::Vector3d& query, double radius) const {
  std::vector<Eigen::Index> out;
  if (nodes_.empty()) return out;
  radius_rec(0, query, radius * radius, out);
  std::sort(out.begin(), out.end());
  return out;
}

void KdTree::radius_rec(std::int32_t id, const Eigen::Vector3d& q, double r2,
                        std::vector<Eigen::Index>& out) const {
  const Node& node = nodes_[static_cast<std::size_t>(id)];
  if (node.axis < 0) {
    for (std::int32_t i = node.begin; i < node.end; ++i) {
      const Eigen::Index idx = order_[static_cast<std::size_t>(i)];
      if ((points_.col(idx) - q).squaredNorm() <= r2) out.push_back(idx);
    }
    return;
  }
  const double diff = q(node.axis) - node.split;
  if (diff < 0 || diff * diff <= r2) radius_rec(node.left, q, r2, out);
  if (diff >= 0 || diff * diff <= r2) radius_rec(node.right, q, r2, out);
}

}  // namespace v2x

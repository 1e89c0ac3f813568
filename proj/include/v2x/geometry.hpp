#pragma once

// Frames, poses, interpolation, projection and box math.
//
// Conventions shared by every other module:
//  * quaternions are written (x, y, z, w) whenever they leave memory;
//  * a Pose maps points expressed in `source_frame` into `target_frame`,
//    p_target = R * p_source + t;
//  * an empty frame identifier is a wildcard that matches any frame;
//  * boxes carry yaw only, measured about +z, normalized to [-pi, pi).

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "v2x/errors.hpp"

namespace v2x {

template <typename Scalar>
using Quaternion = Eigen::Quaternion<Scalar>;
template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Matrix3X = Eigen::Matrix<Scalar, 3, Eigen::Dynamic>;

inline constexpr double kPi = 3.14159265358979323846;

/// Wraps an angle into [-pi, pi).
template <typename Scalar>
Scalar normalize_angle(Scalar angle) {
  const Scalar two_pi = Scalar(2 * kPi);
  Scalar wrapped = std::fmod(angle + Scalar(kPi), two_pi);
  if (wrapped < Scalar(0)) wrapped += two_pi;
  wrapped -= Scalar(kPi);
  // fmod can land exactly on +pi after the shift back
  if (wrapped >= Scalar(kPi)) wrapped -= two_pi;
  return wrapped;
}

/// Shortest signed difference a - b, in [-pi, pi).
template <typename Scalar>
Scalar angle_difference(Scalar a, Scalar b) {
  return normalize_angle(a - b);
}

template <typename Scalar>
void require_unit(const Quaternion<Scalar>& q, Scalar tolerance = Scalar(1e-6)) {
  using std::abs;
  if (!(abs(q.norm() - Scalar(1)) <= tolerance)) {
    throw InvalidQuaternion("quaternion is not unit length (norm " + std::to_string(double(q.norm())) +
                            ")");
  }
}

template <typename Scalar>
Quaternion<Scalar> yaw_quaternion(Scalar yaw) {
  return Quaternion<Scalar>(Eigen::AngleAxis<Scalar>(yaw, Vector3<Scalar>::UnitZ()));
}

/// Heading of the rotated x axis projected onto the ground plane.
template <typename Scalar>
Scalar yaw_of(const Quaternion<Scalar>& q) {
  const Eigen::Matrix<Scalar, 3, 3> r = q.toRotationMatrix();
  return normalize_angle(std::atan2(r(1, 0), r(0, 0)));
}

/// Rotation angle between two unit quaternions, in [0, pi]. q and -q are the
/// same rotation.
template <typename Scalar>
Scalar rotation_angle(const Quaternion<Scalar>& a, const Quaternion<Scalar>& b) {
  const Quaternion<Scalar> delta = a.conjugate() * b;
  return Scalar(2) * std::atan2(delta.vec().norm(), std::abs(delta.w()));
}

template <typename Scalar>
bool same_rotation(const Quaternion<Scalar>& a, const Quaternion<Scalar>& b,
                   Scalar tolerance = Scalar(1e-9)) {
  return rotation_angle(a, b) <= tolerance;
}

/// Spherical linear interpolation q0 (q0^-1 q1)^t along the shortest arc.
/// Falls back to normalized lerp when the endpoints are closer than the
/// acos() conditioning allows.
template <typename Scalar>
Quaternion<Scalar> slerp(const Quaternion<Scalar>& q0, const Quaternion<Scalar>& q1, Scalar t) {
  require_unit(q0);
  require_unit(q1);
  Eigen::Matrix<Scalar, 4, 1> a = q0.coeffs();
  Eigen::Matrix<Scalar, 4, 1> b = q1.coeffs();
  Scalar dot = a.dot(b);
  if (dot < Scalar(0)) {
    b = -b;
    dot = -dot;
  }
  Eigen::Matrix<Scalar, 4, 1> out;
  if (dot > Scalar(1) - Scalar(1e-6)) {
    out = (a + t * (b - a)).normalized();
  } else {
    const Scalar theta = std::acos(dot);
    const Scalar s = std::sin(theta);
    out = (std::sin((Scalar(1) - t) * theta) / s) * a + (std::sin(t * theta) / s) * b;
    out.normalize();
  }
  Quaternion<Scalar> q;
  q.coeffs() = out;
  return q;
}

inline bool frames_match(std::string_view a, std::string_view b) {
  return a.empty() || b.empty() || a == b;
}

/// Rigid transform from `source_frame` to `target_frame`.
template <typename Scalar>
struct PoseT {
  Quaternion<Scalar> rotation = Quaternion<Scalar>::Identity();
  Vector3<Scalar> translation = Vector3<Scalar>::Zero();
  std::string source_frame;
  std::string target_frame;

  static PoseT identity(std::string source = {}, std::string target = {}) {
    return PoseT{Quaternion<Scalar>::Identity(), Vector3<Scalar>::Zero(), std::move(source),
                 std::move(target)};
  }

  static PoseT from_matrix(const Eigen::Matrix<Scalar, 4, 4>& m, std::string source = {},
                           std::string target = {}) {
    Quaternion<Scalar> q(Eigen::Matrix<Scalar, 3, 3>(m.template topLeftCorner<3, 3>()));
    q.normalize();
    return PoseT{q, m.template topRightCorner<3, 1>(), std::move(source), std::move(target)};
  }

  Eigen::Matrix<Scalar, 3, 3> rotation_matrix() const { return rotation.toRotationMatrix(); }

  Eigen::Matrix<Scalar, 4, 4> matrix() const {
    Eigen::Matrix<Scalar, 4, 4> m = Eigen::Matrix<Scalar, 4, 4>::Identity();
    m.template topLeftCorner<3, 3>() = rotation_matrix();
    m.template topRightCorner<3, 1>() = translation;
    return m;
  }

  Vector3<Scalar> operator*(const Vector3<Scalar>& p) const { return rotation * p + translation; }

  /// Applies the transform to every column of a 3xN block.
  template <typename Derived>
  Matrix3X<Scalar> apply(const Eigen::MatrixBase<Derived>& points) const {
    Matrix3X<Scalar> out = rotation_matrix() * points;
    out.colwise() += translation;
    return out;
  }
};

using Pose = PoseT<double>;

/// a ∘ b: first b (X -> Y), then a (Y -> Z). Result maps X -> Z.
template <typename Scalar>
PoseT<Scalar> compose(const PoseT<Scalar>& a, const PoseT<Scalar>& b) {
  if (!frames_match(b.target_frame, a.source_frame)) {
    throw FrameError("cannot compose: '" + b.target_frame + "' does not feed '" + a.source_frame + "'");
  }
  PoseT<Scalar> out;
  out.rotation = (a.rotation * b.rotation).normalized();
  out.translation = a.rotation * b.translation + a.translation;
  out.source_frame = b.source_frame;
  out.target_frame = a.target_frame;
  return out;
}

template <typename Scalar>
PoseT<Scalar> invert(const PoseT<Scalar>& p) {
  PoseT<Scalar> out;
  out.rotation = p.rotation.conjugate();
  out.translation = -(out.rotation * p.translation);
  out.source_frame = p.target_frame;
  out.target_frame = p.source_frame;
  return out;
}

/// Rotation by slerp, translation by T0 + t (T1 - T0).
template <typename Scalar>
PoseT<Scalar> interpolate_pose(const PoseT<Scalar>& p0, const PoseT<Scalar>& p1, Scalar t) {
  if (!frames_match(p0.source_frame, p1.source_frame) ||
      !frames_match(p0.target_frame, p1.target_frame)) {
    throw FrameError("cannot interpolate poses between different frame pairs");
  }
  PoseT<Scalar> out;
  out.rotation = slerp(p0.rotation, p1.rotation, t);
  out.translation = p0.translation + t * (p1.translation - p0.translation);
  out.source_frame = p0.source_frame.empty() ? p1.source_frame : p0.source_frame;
  out.target_frame = p0.target_frame.empty() ? p1.target_frame : p0.target_frame;
  return out;
}

// ---------------------------------------------------------------------------
// Point clouds

struct PointCloud {
  Eigen::Matrix3Xd points;
  Eigen::VectorXd intensity;  ///< empty, or one value per point
  std::string frame_id;
  std::int64_t timestamp_us = 0;

  Eigen::Index size() const { return points.cols(); }
  bool empty() const { return points.cols() == 0; }
  bool has_intensity() const { return intensity.size() == points.cols() && points.cols() > 0; }
};

PointCloud transform_points(const PointCloud& cloud, const Pose& pose);

/// Columns `indices` of `cloud`, intensity included.
PointCloud select_points(const PointCloud& cloud, std::span<const Eigen::Index> indices);

// ---------------------------------------------------------------------------
// Boxes

enum class Category { Car, Truck, Trailer, Van, Motorcycle, Bus, Pedestrian, Bicycle, Other };

inline constexpr std::array<Category, 8> kTrafficCategories = {
    Category::Car,        Category::Truck,      Category::Trailer, Category::Van,
    Category::Motorcycle, Category::Bus,        Category::Pedestrian, Category::Bicycle};

inline constexpr std::array<Category, 9> kAllCategories = {
    Category::Car,        Category::Truck,      Category::Trailer,    Category::Van,
    Category::Motorcycle, Category::Bus,        Category::Pedestrian, Category::Bicycle,
    Category::Other};

/// Upper-case OpenLABEL type name, e.g. "CAR".
std::string_view to_string(Category c);
/// Case-insensitive; unknown names map to Category::Other.
Category category_from_string(std::string_view name);

using AttributeValue = std::variant<bool, double, std::string>;

struct Box3D {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d dimensions = Eigen::Vector3d::Ones();  ///< length (x), width (y), height (z)
  double yaw = 0.0;
  Category category = Category::Other;
  std::optional<std::string> track_id;
  std::map<std::string, AttributeValue> attributes;
  std::optional<double> score;
  std::string frame_id;

  double length() const { return dimensions.x(); }
  double width() const { return dimensions.y(); }
  double height() const { return dimensions.z(); }
  double volume() const { return dimensions.prod(); }
};

/// Throws InvalidBox when dimensions are not strictly positive and finite,
/// the yaw is outside [-pi, pi) or the score is outside [0, 1].
void validate(const Box3D& box);

/// Numeric attribute lookup; nullopt when absent or not a number.
std::optional<double> numeric_attribute(const Box3D& box, const std::string& key);

/// Corner order: bottom face (z - h/2) first, counter-clockwise seen from
/// above starting at front-left, then the top face in the same order:
///   0 (+l/2, +w/2, -h/2)   1 (-l/2, +w/2, -h/2)
///   2 (-l/2, -w/2, -h/2)   3 (+l/2, -w/2, -h/2)
///   4..7 = 0..3 with +h/2
/// "front" is the +x axis of the box frame, rotated by yaw.
std::array<Eigen::Vector3d, 8> box_corners(const Box3D& box);

/// The 12 edges as corner index pairs (bottom ring, top ring, pillars).
const std::array<std::array<int, 2>, 12>& box_edges();

/// Inverse of box_corners for the geometry fields (center, dimensions, yaw).
Box3D box_from_corners(const std::array<Eigen::Vector3d, 8>& corners);

/// Volumetric IoU with exact yaw-aware footprint clipping.
double iou_3d(const Box3D& a, const Box3D& b);

/// Intersection area of the two footprints on the ground plane.
double bev_intersection_area(const Box3D& a, const Box3D& b);

/// Center distance on the ground plane.
inline double bev_center_distance(const Box3D& a, const Box3D& b) {
  return (a.center.head<2>() - b.center.head<2>()).norm();
}

/// Oriented box around a point set: yaw of the minimum-area rectangle around
/// the ground-plane convex hull (principal axis when the hull is degenerate),
/// length along the longer side, extents measured in the rotated frame.
/// Needs at least 5 points. Degenerate extents are clamped to 1 mm.
Box3D fit_oriented_box(const Eigen::Matrix3Xd& points);
Box3D fit_oriented_box(const PointCloud& cloud);

/// Points inside the box (closed), for num_points style attributes.
std::size_t count_points_in_box(const Box3D& box, const Eigen::Matrix3Xd& points);

// ---------------------------------------------------------------------------
// Cameras

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
  }
};

/// Brown-Conrady: radial k1, k2, k3 and tangential p1, p2.
struct Distortion {
  double k1 = 0.0;
  double k2 = 0.0;
  double k3 = 0.0;
  double p1 = 0.0;
  double p2 = 0.0;

  bool is_zero() const { return k1 == 0 && k2 == 0 && k3 == 0 && p1 == 0 && p2 == 0; }
};

struct CameraCalibration {
  Intrinsics intrinsics;
  Distortion distortion;
  Pose extrinsics;  ///< sensor frame -> camera frame
  int width = 0;
  int height = 0;
};

void validate(const CameraCalibration& calib);

/// Applies lens distortion to normalized image coordinates (x/z, y/z).
Eigen::Vector2d distort(const Eigen::Vector2d& normalized, const Distortion& d);
/// Inverts `distort` by Newton iteration.
Eigen::Vector2d undistort(const Eigen::Vector2d& distorted, const Distortion& d);

struct Projection {
  Eigen::Vector2d pixel;
  bool in_front = false;  ///< z > 0 in the camera frame
};

/// Pinhole projection with distortion. Input points are in the camera frame.
/// Points with z <= 0 are flagged; their pixel is NaN when z == 0.
std::vector<Projection> project_points(const Eigen::Matrix3Xd& camera_points, const Intrinsics& k,
                                       const Distortion& d = {});
std::vector<Projection> project_points(const Eigen::Matrix3Xd& camera_points,
                                       const CameraCalibration& calib);

struct Correspondence {
  Eigen::Vector3d point;  ///< sensor frame
  Eigen::Vector2d pixel;
};

struct ExtrinsicsEstimate {
  Pose pose;         ///< sensor -> camera
  double rmse = 0;   ///< RMS reprojection error per image coordinate, pixels
  int iterations = 0;
};

/// Pose minimizing the squared reprojection error of 2D-3D correspondences.
/// Linear initialization (DLT, or a homography when the points are coplanar)
/// followed by damped Gauss-Newton. Needs at least 6 correspondences; throws
/// EstimationError on collinear or otherwise rank-deficient input.
ExtrinsicsEstimate estimate_extrinsics(std::span<const Correspondence> correspondences,
                                       const Intrinsics& k, const Distortion& d = {},
                                       std::string sensor_frame = "sensor",
                                       std::string camera_frame = "camera");

}  // namespace v2x

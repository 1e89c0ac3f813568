#include "v2x/geometry.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cctype>
#include <limits>

namespace v2x {

PointCloud transform_points(const PointCloud& cloud, const Pose& pose) {
  if (!frames_match(cloud.frame_id, pose.source_frame)) {
    throw FrameError("cloud is in '" + cloud.frame_id + "' but the pose starts at '" +
                     pose.source_frame + "'");
  }
  PointCloud out;
  out.points = pose.apply(cloud.points);
  out.intensity = cloud.intensity;
  out.frame_id = pose.target_frame.empty() ? cloud.frame_id : pose.target_frame;
  out.timestamp_us = cloud.timestamp_us;
  return out;
}

PointCloud select_points(const PointCloud& cloud, std::span<const Eigen::Index> indices) {
  PointCloud out;
  out.frame_id = cloud.frame_id;
  out.timestamp_us = cloud.timestamp_us;
  out.points.resize(3, static_cast<Eigen::Index>(indices.size()));
  const bool with_intensity = cloud.has_intensity();
  if (with_intensity) out.intensity.resize(static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    out.points.col(col) = cloud.points.col(indices[i]);
    if (with_intensity) out.intensity(col) = cloud.intensity(indices[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Category c) {
  switch (c) {
    case Category::Car: return "CAR";
    case Category::Truck: return "TRUCK";
    case Category::Trailer: return "TRAILER";
    case Category::Van: return "VAN";
    case Category::Motorcycle: return "MOTORCYCLE";
    case Category::Bus: return "BUS";
    case Category::Pedestrian: return "PEDESTRIAN";
    case Category::Bicycle: return "BICYCLE";
    case Category::Other: return "OTHER";
  }
  return "OTHER";
}

Category category_from_string(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::toupper(ch)); });
  for (Category c : kAllCategories) {
    if (to_string(c) == upper) return c;
  }
  return Category::Other;
}

void validate(const Box3D& box) {
  if (!box.center.allFinite()) throw InvalidBox("box center is not finite");
  if (!box.dimensions.allFinite() || (box.dimensions.array() <= 0.0).any()) {
    throw InvalidBox("box dimensions must be strictly positive");
  }
  if (!std::isfinite(box.yaw) || box.yaw < -kPi || box.yaw >= kPi) {
    throw InvalidBox("box yaw must lie in [-pi, pi)");
  }
  if (box.score && !(*box.score >= 0.0 && *box.score <= 1.0)) {
    throw InvalidBox("box score must lie in [0, 1]");
  }
}

std::optional<double> numeric_attribute(const Box3D& box, const std::string& key) {
  auto it = box.attributes.find(key);
  if (it == box.attributes.end()) return std::nullopt;
  if (const double* v = std::get_if<double>(&it->second)) return *v;
  return std::nullopt;
}

std::array<Eigen::Vector3d, 8> box_corners(const Box3D& box) {
  static constexpr double kSigns[4][2] = {{1, 1}, {-1, 1}, {-1, -1}, {1, -1}};
  const Eigen::Matrix3d r = Eigen::AngleAxisd(box.yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  const Eigen::Vector3d half = 0.5 * box.dimensions;
  std::array<Eigen::Vector3d, 8> corners;
  for (int level = 0; level < 2; ++level) {
    const double z = level == 0 ? -half.z() : half.z();
    for (int i = 0; i < 4; ++i) {
      const Eigen::Vector3d local(kSigns[i][0] * half.x(), kSigns[i][1] * half.y(), z);
      corners[static_cast<std::size_t>(level * 4 + i)] = box.center + r * local;
    }
  }
  return corners;
}

const std::array<std::array<int, 2>, 12>& box_edges() {
  static const std::array<std::array<int, 2>, 12> edges = {{{0, 1},
                                                           {1, 2},
                                                           {2, 3},
                                                           {3, 0},
                                                           {4, 5},
                                                           {5, 6},
                                                           {6, 7},
                                                           {7, 4},
                                                           {0, 4},
                                                           {1, 5},
                                                           {2, 6},
                                                           {3, 7}}};
  return edges;
}

Box3D box_from_corners(const std::array<Eigen::Vector3d, 8>& c) {
  Box3D box;
  box.center = Eigen::Vector3d::Zero();
  for (const auto& p : c) box.center += p;
  box.center /= 8.0;
  const Eigen::Vector3d front = c[0] - c[1];
  box.dimensions = Eigen::Vector3d(front.norm(), (c[0] - c[3]).norm(), (c[4] - c[0]).norm());
  box.yaw = normalize_angle(std::atan2(front.y(), front.x()));
  return box;
}

namespace {

using Polygon = std::vector<Eigen::Vector2d>;

Polygon footprint(const Box3D& box) {
  const auto corners = box_corners(box);
  return {corners[0].head<2>(), corners[1].head<2>(), corners[2].head<2>(), corners[3].head<2>()};
}

double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

// Sutherland-Hodgman against a convex counter-clockwise clip polygon.
Polygon clip_convex(const Polygon& subject, const Polygon& clip) {
  Polygon output = subject;
  for (std::size_t i = 0; i < clip.size() && !output.empty(); ++i) {
    const Eigen::Vector2d& a = clip[i];
    const Eigen::Vector2d& b = clip[(i + 1) % clip.size()];
    const Eigen::Vector2d edge = b - a;
    auto side = [&](const Eigen::Vector2d& p) { return cross2(edge, p - a); };
    Polygon input;
    input.swap(output);
    for (std::size_t j = 0; j < input.size(); ++j) {
      const Eigen::Vector2d& cur = input[j];
      const Eigen::Vector2d& prev = input[(j + input.size() - 1) % input.size()];
      const double s_cur = side(cur);
      const double s_prev = side(prev);
      if (s_cur >= 0) {
        if (s_prev < 0) output.push_back(prev + (cur - prev) * (s_prev / (s_prev - s_cur)));
        output.push_back(cur);
      } else if (s_prev >= 0) {
        output.push_back(prev + (cur - prev) * (s_prev / (s_prev - s_cur)));
      }
    }
  }
  return output;
}

double polygon_area(const Polygon& poly) {
  double twice = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) twice += cross2(poly[i], poly[(i + 1) % poly.size()]);
  return 0.5 * std::abs(twice);
}

}  // namespace

double bev_intersection_area(const Box3D& a, const Box3D& b) {
  return polygon_area(clip_convex(footprint(a), footprint(b)));
}

double iou_3d(const Box3D& a, const Box3D& b) {
  const double z_low = std::max(a.center.z() - 0.5 * a.height(), b.center.z() - 0.5 * b.height());
  const double z_high = std::min(a.center.z() + 0.5 * a.height(), b.center.z() + 0.5 * b.height());
  const double z_overlap = z_high - z_low;
  if (z_overlap <= 0.0) return 0.0;
  const double inter = bev_intersection_area(a, b) * z_overlap;
  if (inter <= 0.0) return 0.0;
  const double uni = a.volume() + b.volume() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

namespace {

// Andrew's monotone chain, counter-clockwise, collinear points dropped.
std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> pts) {
  std::sort(pts.begin(), pts.end(), [](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  if (pts.size() < 3) return pts;
  auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Eigen::Vector2d> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i - 1]) <= 0) --k;
    hull[k++] = pts[i - 1];
  }
  hull.resize(k - 1);
  return hull;
}

double principal_yaw(const Eigen::Matrix3Xd& points) {
  const Eigen::Vector2d mean = points.topRows<2>().rowwise().mean();
  const Eigen::Matrix2Xd centered = points.topRows<2>().colwise() - mean;
  const Eigen::Matrix2d cov = centered * centered.transpose() / double(points.cols());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  const Eigen::Vector2d axis = eig.eigenvectors().col(1);  // largest eigenvalue
  return std::atan2(axis.y(), axis.x());
}

}  // namespace

Box3D fit_oriented_box(const Eigen::Matrix3Xd& points) {
  if (points.cols() < 5) {
    throw EstimationError("fit_oriented_box needs at least 5 points, got " +
                          std::to_string(points.cols()));
  }
  std::vector<Eigen::Vector2d> flat(static_cast<std::size_t>(points.cols()));
  for (Eigen::Index i = 0; i < points.cols(); ++i) flat[static_cast<std::size_t>(i)] = points.col(i).head<2>();
  const std::vector<Eigen::Vector2d> hull = convex_hull(std::move(flat));

  // the minimum-area rectangle has a side on a hull edge
  double yaw = principal_yaw(points);
  if (hull.size() >= 3) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < hull.size(); ++i) {
      const Eigen::Vector2d e = hull[(i + 1) % hull.size()] - hull[i];
      if (e.norm() == 0) continue;
      const Eigen::Vector2d u = e.normalized();
      const Eigen::Vector2d v(-u.y(), u.x());
      double ulo = std::numeric_limits<double>::infinity(), uhi = -ulo, vlo = ulo, vhi = -ulo;
      for (const Eigen::Vector2d& p : hull) {
        ulo = std::min(ulo, u.dot(p));
        uhi = std::max(uhi, u.dot(p));
        vlo = std::min(vlo, v.dot(p));
        vhi = std::max(vhi, v.dot(p));
      }
      const double area = (uhi - ulo) * (vhi - vlo);
      if (area < best * (1 - 1e-12)) {
        best = area;
        // length along the longer side
        yaw = uhi - ulo >= vhi - vlo ? std::atan2(u.y(), u.x()) : std::atan2(v.y(), v.x());
      }
    }
  }
  // the axis has no direction; keep yaw in [-pi/2, pi/2)
  yaw = normalize_angle(yaw);
  if (yaw >= kPi / 2) yaw -= kPi;
  if (yaw < -kPi / 2) yaw += kPi;

  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  Eigen::Matrix2d to_box;
  to_box << c, s, -s, c;
  const Eigen::Matrix2Xd local = to_box * points.topRows<2>();
  const Eigen::Vector2d lo = local.rowwise().minCoeff();
  const Eigen::Vector2d hi = local.rowwise().maxCoeff();
  const double z_lo = points.row(2).minCoeff();
  const double z_hi = points.row(2).maxCoeff();

  constexpr double kMinExtent = 1e-3;
  // rounding in the rotation would otherwise leave face points a hair outside
  constexpr double kPad = 1e-9;
  Box3D box;
  const Eigen::Vector2d mid_local = 0.5 * (lo + hi);
  box.center.head<2>() = to_box.transpose() * mid_local;
  box.center.z() = 0.5 * (z_lo + z_hi);
  box.dimensions = Eigen::Vector3d(std::max(hi.x() - lo.x() + kPad, kMinExtent),
                                   std::max(hi.y() - lo.y() + kPad, kMinExtent),
                                   std::max(z_hi - z_lo + kPad, kMinExtent));
  box.yaw = normalize_angle(yaw);
  return box;
}

Box3D fit_oriented_box(const PointCloud& cloud) {
  Box3D box = fit_oriented_box(cloud.points);
  box.frame_id = cloud.frame_id;
  return box;
}

std::size_t count_points_in_box(const Box3D& box, const Eigen::Matrix3Xd& points) {
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  const Eigen::Vector3d half = 0.5 * box.dimensions;
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    const Eigen::Vector3d d = points.col(i) - box.center;
    const double lx = c * d.x() + s * d.y();
    const double ly = -s * d.x() + c * d.y();
    if (std::abs(lx) <= half.x() && std::abs(ly) <= half.y() && std::abs(d.z()) <= half.z()) ++n;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Cameras

void validate(const CameraCalibration& calib) {
  const auto& k = calib.intrinsics;
  if (!(k.fx > 0 && k.fy > 0)) throw ConfigError("focal lengths must be positive");
  if (!(k.cx >= 0 && k.cx < calib.width && k.cy >= 0 && k.cy < calib.height)) {
    throw ConfigError("principal point must lie inside the image");
  }
}

namespace {

// Distortion and its 2x2 Jacobian with respect to normalized coordinates.
Eigen::Vector2d distort_with_jacobian(const Eigen::Vector2d& n, const Distortion& d,
                                      Eigen::Matrix2d* jac) {
  const double x = n.x();
  const double y = n.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3));
  const Eigen::Vector2d out(x * radial + 2 * d.p1 * x * y + d.p2 * (r2 + 2 * x * x),
                            y * radial + d.p1 * (r2 + 2 * y * y) + 2 * d.p2 * x * y);
  if (jac) {
    const double dradial_dr2 = d.k1 + r2 * (2 * d.k2 + 3 * d.k3 * r2);
    const double dr_dx = 2 * x * dradial_dr2;
    const double dr_dy = 2 * y * dradial_dr2;
    (*jac)(0, 0) = radial + x * dr_dx + 2 * d.p1 * y + 6 * d.p2 * x;
    (*jac)(0, 1) = x * dr_dy + 2 * d.p1 * x + 2 * d.p2 * y;
    (*jac)(1, 0) = y * dr_dx + 2 * d.p1 * x + 2 * d.p2 * y;
    (*jac)(1, 1) = radial + y * dr_dy + 6 * d.p1 * y + 2 * d.p2 * x;
  }
  return out;
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

}  // namespace

Eigen::Vector2d distort(const Eigen::Vector2d& normalized, const Distortion& d) {
  return distort_with_jacobian(normalized, d, nullptr);
}

Eigen::Vector2d undistort(const Eigen::Vector2d& distorted, const Distortion& d) {
  if (d.is_zero()) return distorted;
  Eigen::Vector2d n = distorted;
  for (int it = 0; it < 30; ++it) {
    Eigen::Matrix2d jac;
    const Eigen::Vector2d r = distort_with_jacobian(n, d, &jac) - distorted;
    if (r.norm() < 1e-15) break;
    n -= jac.partialPivLu().solve(r);
  }
  return n;
}

std::vector<Projection> project_points(const Eigen::Matrix3Xd& camera_points, const Intrinsics& k,
                                       const Distortion& d) {
  std::vector<Projection> out(static_cast<std::size_t>(camera_points.cols()));
  for (Eigen::Index i = 0; i < camera_points.cols(); ++i) {
    const Eigen::Vector3d p = camera_points.col(i);
    Projection& proj = out[static_cast<std::size_t>(i)];
    proj.in_front = p.z() > 0.0;
    if (p.z() == 0.0) {
      proj.pixel.setConstant(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const Eigen::Vector2d nd = distort(p.head<2>() / p.z(), d);
    proj.pixel = Eigen::Vector2d(k.fx * nd.x() + k.cx, k.fy * nd.y() + k.cy);
  }
  return out;
}

std::vector<Projection> project_points(const Eigen::Matrix3Xd& camera_points,
                                       const CameraCalibration& calib) {
  return project_points(camera_points, calib.intrinsics, calib.distortion);
}

namespace {

struct LinearPose {
  Eigen::Matrix3d rotation;
  Eigen::Vector3d translation;
};

Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

// Hartley-normalized DLT on normalized image coordinates.
LinearPose dlt_pose(const Eigen::Matrix3Xd& pts, const Eigen::Matrix2Xd& img) {
  const Eigen::Index n = pts.cols();
  const Eigen::Vector3d centroid = pts.rowwise().mean();
  const double spread = (pts.colwise() - centroid).colwise().norm().mean();
  const double scale = std::sqrt(3.0) / spread;
  Eigen::Matrix4d t_norm = Eigen::Matrix4d::Identity();
  t_norm.topLeftCorner<3, 3>() *= scale;
  t_norm.topRightCorner<3, 1>() = -scale * centroid;

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * n, 12);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Vector4d x;
    x << scale * (pts.col(i) - centroid), 1.0;
    const double u = img(0, i);
    const double v = img(1, i);
    a.block<1, 4>(2 * i, 0) = x.transpose();
    a.block<1, 4>(2 * i, 8) = -u * x.transpose();
    a.block<1, 4>(2 * i + 1, 4) = x.transpose();
    a.block<1, 4>(2 * i + 1, 8) = -v * x.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv(10) < 1e-10 * sv(0)) {
    throw EstimationError("correspondences are degenerate for pose estimation");
  }
  const Eigen::VectorXd p = svd.matrixV().col(11);
  Eigen::Matrix<double, 3, 4> proj;
  proj.row(0) = p.segment<4>(0).transpose();
  proj.row(1) = p.segment<4>(4).transpose();
  proj.row(2) = p.segment<4>(8).transpose();
  proj = proj * t_norm;

  Eigen::Matrix3d m = proj.leftCols<3>();
  if (m.determinant() < 0) {
    proj = -proj;
    m = -m;
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> msvd(m);
  const double lambda = msvd.singularValues().mean();
  return {nearest_rotation(m), proj.col(3) / lambda};
}

// Planar targets: homography between plane coordinates and the image.
LinearPose homography_pose(const Eigen::Matrix3Xd& pts, const Eigen::Matrix2Xd& img,
                           const Eigen::Vector3d& centroid, Eigen::Matrix3d basis) {
  // the SVD basis may be a reflection; flip the plane normal to make it proper
  if (basis.determinant() < 0) basis.col(2) *= -1;
  const Eigen::Index n = pts.cols();
  const Eigen::Matrix3Xd plane = basis.transpose() * (pts.colwise() - centroid);
  const double spread = plane.topRows<2>().colwise().norm().mean();
  const double scale = std::sqrt(2.0) / spread;

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * n, 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector3d x(scale * plane(0, i), scale * plane(1, i), 1.0);
    const double u = img(0, i);
    const double v = img(1, i);
    a.block<1, 3>(2 * i, 0) = x.transpose();
    a.block<1, 3>(2 * i, 6) = -u * x.transpose();
    a.block<1, 3>(2 * i + 1, 3) = x.transpose();
    a.block<1, 3>(2 * i + 1, 6) = -v * x.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv(7) < 1e-10 * sv(0)) {
    throw EstimationError("planar correspondences are degenerate for pose estimation");
  }
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hm;
  hm << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  hm.col(0) *= scale;
  hm.col(1) *= scale;
  const double lambda = 0.5 * (hm.col(0).norm() + hm.col(1).norm());
  hm /= lambda;
  if (hm(2, 2) < 0) hm = -hm;  // plane origin in front of the camera
  Eigen::Matrix3d r;
  r.col(0) = hm.col(0);
  r.col(1) = hm.col(1);
  r.col(2) = hm.col(0).cross(hm.col(1));
  const Eigen::Matrix3d r_plane = nearest_rotation(r);
  const Eigen::Matrix3d rotation = r_plane * basis.transpose();
  return {rotation, hm.col(2) - rotation * centroid};
}

}  // namespace

ExtrinsicsEstimate estimate_extrinsics(std::span<const Correspondence> correspondences,
                                       const Intrinsics& k, const Distortion& d,
                                       std::string sensor_frame, std::string camera_frame) {
  const auto n = static_cast<Eigen::Index>(correspondences.size());
  if (n < 6) {
    throw EstimationError("extrinsics estimation needs at least 6 correspondences, got " +
                          std::to_string(n));
  }
  Eigen::Matrix3Xd pts(3, n);
  Eigen::Matrix2Xd pixels(2, n);
  Eigen::Matrix2Xd normalized(2, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& c = correspondences[static_cast<std::size_t>(i)];
    pts.col(i) = c.point;
    pixels.col(i) = c.pixel;
    const Eigen::Vector2d nd((c.pixel.x() - k.cx) / k.fx, (c.pixel.y() - k.cy) / k.fy);
    normalized.col(i) = undistort(nd, d);
  }

  const Eigen::Vector3d centroid = pts.rowwise().mean();
  const Eigen::Matrix3Xd centered = pts.colwise() - centroid;
  Eigen::JacobiSVD<Eigen::Matrix3Xd> shape(centered, Eigen::ComputeFullU);
  const Eigen::Vector3d spread = shape.singularValues();
  if (spread(0) <= 0 || spread(1) < 1e-6 * spread(0)) {
    throw EstimationError("correspondences are collinear");
  }
  LinearPose init = spread(2) < 1e-6 * spread(0)
                        ? homography_pose(pts, normalized, centroid, shape.matrixU())
                        : dlt_pose(pts, normalized);

  Eigen::Matrix3d rotation = init.rotation;
  Eigen::Vector3d translation = init.translation;

  auto residuals = [&](const Eigen::Matrix3d& r, const Eigen::Vector3d& t, Eigen::VectorXd& res,
                       Eigen::MatrixXd* jac) {
    res.resize(2 * n);
    if (jac) jac->resize(2 * n, 6);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Vector3d rotated = r * pts.col(i);
      const Eigen::Vector3d pc = rotated + t;
      const double z = pc.z();
      Eigen::Matrix2d ddist;
      const Eigen::Vector2d nd = distort_with_jacobian(pc.head<2>() / z, d, &ddist);
      res(2 * i) = k.fx * nd.x() + k.cx - pixels(0, i);
      res(2 * i + 1) = k.fy * nd.y() + k.cy - pixels(1, i);
      if (jac) {
        Eigen::Matrix<double, 2, 3> dn;
        dn << 1 / z, 0, -pc.x() / (z * z), 0, 1 / z, -pc.y() / (z * z);
        Eigen::Matrix<double, 2, 3> dpix = Eigen::Vector2d(k.fx, k.fy).asDiagonal() * ddist * dn;
        jac->block<2, 3>(2 * i, 0) = dpix * (-skew(rotated));
        jac->block<2, 3>(2 * i, 3) = dpix;
      }
    }
  };

  Eigen::VectorXd res;
  Eigen::MatrixXd jac;
  residuals(rotation, translation, res, &jac);
  double cost = res.squaredNorm();
  double damping = 1e-3;
  int iterations = 0;
  for (; iterations < 100; ++iterations) {
    const Eigen::Matrix<double, 6, 6> jtj = jac.transpose() * jac;
    const Eigen::Matrix<double, 6, 1> jtr = jac.transpose() * res;
    Eigen::Matrix<double, 6, 6> lhs = jtj;
    lhs.diagonal() += damping * jtj.diagonal().cwiseMax(1e-12);
    const Eigen::Matrix<double, 6, 1> step = lhs.ldlt().solve(-jtr);
    if (!step.allFinite()) throw EstimationError("extrinsics refinement diverged");

    const double angle = step.head<3>().norm();
    const Eigen::Matrix3d delta =
        angle > 0 ? Eigen::AngleAxisd(angle, step.head<3>() / angle).toRotationMatrix()
                  : Eigen::Matrix3d::Identity();
    const Eigen::Matrix3d r_new = delta * rotation;
    const Eigen::Vector3d t_new = translation + step.tail<3>();
    Eigen::VectorXd res_new;
    residuals(r_new, t_new, res_new, nullptr);
    const double cost_new = res_new.squaredNorm();
    if (cost_new <= cost) {
      rotation = nearest_rotation(r_new);
      translation = t_new;
      residuals(rotation, translation, res, &jac);
      cost = res.squaredNorm();
      damping = std::max(damping * 0.1, 1e-12);
    } else {
      damping *= 10.0;
    }
    if (step.norm() < 1e-10) {
      ++iterations;
      break;
    }
  }

  ExtrinsicsEstimate est;
  est.pose.rotation = Eigen::Quaterniond(rotation).normalized();
  est.pose.translation = translation;
  est.pose.source_frame = std::move(sensor_frame);
  est.pose.target_frame = std::move(camera_frame);
  est.rmse = std::sqrt(cost / double(2 * n));
  est.iterations = iterations;
  return est;
}

}  // namespace v2x

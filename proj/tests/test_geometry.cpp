#include <gtest/gtest.h>

#include "test_util.hpp"
#include "v2x/assignment.hpp"
#include "v2x/geometry.hpp"
#include "v2x/spatial_index.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

using namespace v2x;
using v2x::test::Rng;
using v2x::test::uniform;

namespace {

// closed-form IoU of two yaw-0 boxes
double axis_aligned_iou(const Box3D& a, const Box3D& b) {
  double inter = 1.0;
  for (int k = 0; k < 3; ++k) {
    const double lo = std::max(a.center(k) - a.dimensions(k) / 2, b.center(k) - b.dimensions(k) / 2);
    const double hi = std::min(a.center(k) + a.dimensions(k) / 2, b.center(k) + b.dimensions(k) / 2);
    inter *= std::max(0.0, hi - lo);
  }
  return inter / (a.volume() + b.volume() - inter);
}

}  // namespace

TEST(Angles, NormalizeIntoHalfOpenRange) {
  EXPECT_DOUBLE_EQ(normalize_angle(kPi), -kPi);
  EXPECT_DOUBLE_EQ(normalize_angle(-kPi), -kPi);
  EXPECT_NEAR(normalize_angle(3 * kPi / 2), -kPi / 2, 1e-12);
  EXPECT_NEAR(normalize_angle(-7.0), -7.0 + 2 * kPi, 1e-12);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double a = normalize_angle(uniform(rng, -50, 50));
    EXPECT_GE(a, -kPi);
    EXPECT_LT(a, kPi);
  }
}

TEST(Quaternion, RequireUnitRejects) {
  EXPECT_THROW(require_unit(Eigen::Quaterniond(2, 0, 0, 0)), InvalidQuaternion);
  EXPECT_NO_THROW(require_unit(Eigen::Quaterniond(1, 0, 0, 0)));
  EXPECT_THROW(slerp(Eigen::Quaterniond(0.5, 0, 0, 0), Eigen::Quaterniond::Identity(), 0.5), InvalidQuaternion);
}

TEST(Quaternion, NegatedIsSameRotation) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const Eigen::Quaterniond q = test::random_quaternion(rng);
    EXPECT_NEAR(std::abs(q.norm() - 1), 0.0, 1e-9);
    Eigen::Quaterniond neg;
    neg.coeffs() = -q.coeffs();
    EXPECT_TRUE(same_rotation(q, neg));
  }
}

TEST(Slerp, EndpointsAndMidpoint) {
  const Eigen::Quaterniond q0 = yaw_quaternion(0.0);
  const Eigen::Quaterniond q1 = yaw_quaternion(kPi / 2);
  EXPECT_LE(rotation_angle(slerp(q0, q1, 0.0), q0), 1e-12);
  EXPECT_LE(rotation_angle(slerp(q0, q1, 1.0), q1), 1e-12);
  EXPECT_NEAR(yaw_of(slerp(q0, q1, 0.5)), kPi / 4, 1e-9);
}

TEST(Slerp, ConstantAngularVelocity) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Quaterniond a = test::random_quaternion(rng);
    const Eigen::Quaterniond b = test::random_quaternion(rng);
    const double t = uniform(rng, 0, 1);
    EXPECT_NEAR(rotation_angle(a, slerp(a, b, t)), t * rotation_angle(a, b), 1e-7);
  }
}

TEST(Slerp, NearlyIdenticalFallsBackToLerp) {
  const Eigen::Quaterniond a = yaw_quaternion(0.3);
  const Eigen::Quaterniond b = yaw_quaternion(0.3 + 1e-5);
  const Eigen::Quaterniond m = slerp(a, b, 0.5);
  EXPECT_NEAR(m.norm(), 1.0, 1e-12);
  EXPECT_NEAR(yaw_of(m), 0.3 + 0.5e-5, 1e-9);
}

TEST(Pose, ComposeWithInverseIsIdentity) {
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    const Pose p = test::random_pose(rng, 50.0, "vehicle", "infra");
    const Pose id = compose(p, invert(p));
    EXPECT_EQ(id.source_frame, "infra");
    EXPECT_EQ(id.target_frame, "infra");
    EXPECT_LE(rotation_angle(id.rotation, Eigen::Quaterniond::Identity()), 1e-9);
    EXPECT_LE(id.translation.norm(), 1e-9);
  }
}

TEST(Pose, ComposeChecksFrames) {
  const Pose a = Pose::identity("b", "c");
  const Pose b = Pose::identity("a", "x");
  EXPECT_THROW(compose(a, b), FrameError);
  const Pose chained = compose(a, Pose::identity("a", "b"));
  EXPECT_EQ(chained.source_frame, "a");
  EXPECT_EQ(chained.target_frame, "c");
  // wildcard frames chain with anything
  EXPECT_NO_THROW(compose(a, Pose::identity()));
}

TEST(Pose, MatrixRoundTrip) {
  Rng rng(5);
  const Pose p = test::random_pose(rng);
  const Pose q = Pose::from_matrix(p.matrix());
  EXPECT_LE(rotation_angle(p.rotation, q.rotation), 1e-12);
  EXPECT_LE((p.translation - q.translation).norm(), 1e-12);
}

TEST(Pose, InterpolationExactAtEndpointsAndMonotone) {
  Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    const Pose a = test::random_pose(rng);
    const Pose b = test::random_pose(rng);
    const Pose at0 = interpolate_pose(a, b, 0.0);
    const Pose at1 = interpolate_pose(a, b, 1.0);
    EXPECT_LE(rotation_angle(at0.rotation, a.rotation), 1e-12);
    EXPECT_LE(rotation_angle(at1.rotation, b.rotation), 1e-12);
    EXPECT_LE((at0.translation - a.translation).norm(), 1e-12);
    EXPECT_LE((at1.translation - b.translation).norm(), 1e-12);
    double prev_angle = 0;
    double prev_dist = 0;
    for (int k = 1; k <= 10; ++k) {
      const Pose m = interpolate_pose(a, b, k / 10.0);
      const double ang = rotation_angle(a.rotation, m.rotation);
      const double dist = (m.translation - a.translation).norm();
      EXPECT_GE(ang, prev_angle - 1e-9);
      EXPECT_GE(dist, prev_dist - 1e-9);
      prev_angle = ang;
      prev_dist = dist;
    }
  }
  EXPECT_THROW(interpolate_pose(Pose::identity("a", "b"), Pose::identity("a", "c"), 0.5), FrameError);
}

TEST(PointCloud, TransformPreservesDistances) {
  Rng rng(7);
  PointCloud c;
  c.points = Eigen::Matrix3Xd::Random(3, 60) * 30;
  c.frame_id = "a";
  const Pose p = test::random_pose(rng, 100, "a", "b");
  const PointCloud moved = transform_points(c, p);
  EXPECT_EQ(moved.frame_id, "b");
  for (int i = 0; i < c.size(); ++i) {
    for (int j = i + 1; j < c.size(); ++j) {
      EXPECT_NEAR((c.points.col(i) - c.points.col(j)).norm(), (moved.points.col(i) - moved.points.col(j)).norm(), 1e-9);
    }
  }
  EXPECT_THROW(transform_points(c, Pose::identity("z", "b")), FrameError);
}

TEST(Box, ValidateRejectsBadFields) {
  Box3D b;
  EXPECT_NO_THROW(validate(b));
  b.dimensions.y() = 0;
  EXPECT_THROW(validate(b), InvalidBox);
  b.dimensions.y() = 1;
  b.yaw = kPi;
  EXPECT_THROW(validate(b), InvalidBox);
  b.yaw = 0;
  b.score = 1.5;
  EXPECT_THROW(validate(b), InvalidBox);
  b.score = 0.5;
  b.center.x() = std::nan("");
  EXPECT_THROW(validate(b), InvalidBox);
}

TEST(Box, CornersRoundTrip) {
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const Box3D b = test::random_box(rng);
    const auto corners = box_corners(b);
    EXPECT_NEAR(corners[0].z(), b.center.z() - b.height() / 2, 1e-12);
    EXPECT_NEAR(corners[4].z(), b.center.z() + b.height() / 2, 1e-12);
    const Box3D back = box_from_corners(corners);
    EXPECT_LE((back.center - b.center).norm(), 1e-9);
    EXPECT_LE((back.dimensions - b.dimensions).norm(), 1e-9);
    EXPECT_NEAR(angle_difference(back.yaw, b.yaw), 0.0, 1e-9);
  }
}

TEST(Box, CornerOrderFrontLeftFirst) {
  Box3D b;
  b.dimensions = {4, 2, 1};
  const auto c = box_corners(b);
  EXPECT_TRUE(c[0].isApprox(Eigen::Vector3d(2, 1, -0.5)));
  EXPECT_TRUE(c[1].isApprox(Eigen::Vector3d(-2, 1, -0.5)));
  EXPECT_TRUE(c[2].isApprox(Eigen::Vector3d(-2, -1, -0.5)));
  EXPECT_TRUE(c[3].isApprox(Eigen::Vector3d(2, -1, -0.5)));
  EXPECT_TRUE(c[7].isApprox(Eigen::Vector3d(2, -1, 0.5)));
  EXPECT_EQ(box_edges().size(), 12u);
}

TEST(Iou, AxisAlignedOracle) {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    Box3D a = test::random_box(rng, 2.0);
    Box3D b = test::random_box(rng, 2.0);
    a.yaw = 0;
    b.yaw = 0;
    EXPECT_NEAR(iou_3d(a, b), axis_aligned_iou(a, b), 1e-9);
  }
}

TEST(Iou, SymmetricAndRigidInvariant) {
  Rng rng(10);
  for (int i = 0; i < 1000; ++i) {
    Box3D a = test::random_box(rng, 2.0);
    Box3D b = test::random_box(rng, 2.0);
    const double ab = iou_3d(a, b);
    EXPECT_NEAR(ab, iou_3d(b, a), 1e-9);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0 + 1e-12);
    // common ground-plane rigid motion
    const double phi = uniform(rng, -kPi, kPi);
    const Eigen::Vector3d t(uniform(rng, -50, 50), uniform(rng, -50, 50), uniform(rng, -3, 3));
    const Eigen::Matrix3d r = yaw_quaternion(phi).toRotationMatrix();
    for (Box3D* x : {&a, &b}) {
      x->center = r * x->center + t;
      x->yaw = normalize_angle(x->yaw + phi);
    }
    EXPECT_NEAR(iou_3d(a, b), ab, 1e-6);
  }
}

TEST(Iou, SelfAndDisjoint) {
  Box3D a;
  a.dimensions = {4, 2, 1.5};
  a.yaw = 0.7;
  EXPECT_NEAR(iou_3d(a, a), 1.0, 1e-12);
  Box3D b = a;
  b.center.x() = 10;
  EXPECT_EQ(iou_3d(a, b), 0.0);
  // a box rotated by pi covers the same volume
  b = a;
  b.yaw = normalize_angle(a.yaw + kPi);
  EXPECT_NEAR(iou_3d(a, b), 1.0, 1e-9);
}

TEST(Box, FitOrientedBoxRecoversSampledBox) {
  Rng rng(11);
  for (int i = 0; i < 50; ++i) {
    Box3D b;
    b.center = {uniform(rng, -20, 20), uniform(rng, -20, 20), 0};
    b.dimensions = {uniform(rng, 3.0, 6.0), uniform(rng, 1.5, 2.2), uniform(rng, 1.2, 2.0)};
    b.yaw = uniform(rng, -kPi, kPi);
    const Eigen::Matrix3Xd pts = test::sample_box_surface(b, 3000, rng);
    const Box3D f = fit_oriented_box(pts);
    EXPECT_LE((f.center - b.center).norm(), 0.1);
    EXPECT_LE((f.dimensions - b.dimensions).cwiseAbs().maxCoeff(), 0.1);
    // heading is ambiguous by pi
    const double d = std::abs(angle_difference(f.yaw, b.yaw));
    EXPECT_LE(std::min(d, kPi - d), 0.02);
    EXPECT_EQ(count_points_in_box(f, pts) > 2900, true);
  }
  EXPECT_THROW(fit_oriented_box(Eigen::Matrix3Xd::Zero(3, 4)), Error);
}

TEST(Camera, DistortUndistortRoundTrip) {
  Rng rng(12);
  const Distortion d{-0.28, 0.07, -0.005, 0.001, -0.0008};
  for (int i = 0; i < 500; ++i) {
    const Eigen::Vector2d x(uniform(rng, -0.6, 0.6), uniform(rng, -0.4, 0.4));
    EXPECT_LE((undistort(distort(x, d), d) - x).norm(), 1e-9);
  }
  EXPECT_EQ(distort({0.3, 0.2}, Distortion{}), Eigen::Vector2d(0.3, 0.2));
}

TEST(Camera, ProjectionFlagsPointsBehind) {
  Eigen::Matrix3Xd p(3, 3);
  p << 1, 0, 0, 2, 0, 0, 10, -1, 0;
  const auto proj = project_points(p, Intrinsics{100, 100, 50, 40});
  EXPECT_TRUE(proj[0].in_front);
  EXPECT_NEAR(proj[0].pixel.x(), 60.0, 1e-12);
  EXPECT_NEAR(proj[0].pixel.y(), 60.0, 1e-12);
  EXPECT_FALSE(proj[1].in_front);
  EXPECT_FALSE(proj[2].in_front);
  EXPECT_TRUE(std::isnan(proj[2].pixel.x()));
}

TEST(Camera, ValidateCalibration) {
  CameraCalibration c;
  c.width = 640;
  c.height = 480;
  c.intrinsics = {500, 500, 320, 240};
  EXPECT_NO_THROW(validate(c));
  c.intrinsics.cx = 640;
  EXPECT_THROW(validate(c), Error);
  c.intrinsics.cx = 320;
  c.intrinsics.fy = 0;
  EXPECT_THROW(validate(c), Error);
}

TEST(Extrinsics, ProjectThenEstimateRecoversPose) {
  Rng rng(13);
  const Intrinsics k{1200, 1180, 960, 600};
  const Distortion d{-0.1, 0.02, 0, 0.0005, -0.0003};
  for (int trial = 0; trial < 30; ++trial) {
    Pose truth = test::random_pose(rng, 2.0, "lidar", "cam");
    // keep the camera looking roughly at the points
    truth.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(uniform(rng, -0.3, 0.3), Eigen::Vector3d::UnitY()) *
                                        Eigen::AngleAxisd(uniform(rng, -0.3, 0.3), Eigen::Vector3d::UnitX()));
    std::vector<Correspondence> corr;
    const bool planar = trial % 3 == 0;
    while (corr.size() < 20) {
      Eigen::Vector3d cam(uniform(rng, -4, 4), uniform(rng, -3, 3), planar ? 12.0 : uniform(rng, 6, 20));
      const Eigen::Vector3d sensor = invert(truth) * cam;
      Eigen::Matrix3Xd m(3, 1);
      m.col(0) = cam;
      const auto px = project_points(m, k, d);
      corr.push_back({sensor, px[0].pixel});
    }
    const ExtrinsicsEstimate est = estimate_extrinsics(corr, k, d, "lidar", "cam");
    EXPECT_LE(rotation_angle(est.pose.rotation, truth.rotation), 1e-6) << "trial " << trial;
    EXPECT_LE((est.pose.translation - truth.translation).norm(), 1e-6) << "trial " << trial;
    EXPECT_LE(est.rmse, 1e-6);
    EXPECT_EQ(est.pose.source_frame, "lidar");
    EXPECT_EQ(est.pose.target_frame, "cam");
  }
}

TEST(Extrinsics, RejectsDegenerateInput) {
  const Intrinsics k{800, 800, 400, 300};
  std::vector<Correspondence> few(5, Correspondence{{0, 0, 5}, {400, 300}});
  EXPECT_THROW(estimate_extrinsics(few, k), EstimationError);
  std::vector<Correspondence> line;
  for (int i = 0; i < 10; ++i) line.push_back({{double(i), 0, 5}, {400.0 + 160 * i / 5.0, 300}});
  EXPECT_THROW(estimate_extrinsics(line, k), EstimationError);
}

TEST(KdTree, MatchesBruteForce) {
  Rng rng(14);
  const Eigen::Matrix3Xd pts = Eigen::Matrix3Xd::Random(3, 700) * 10;
  const KdTree tree(pts);
  for (int q = 0; q < 300; ++q) {
    const Eigen::Vector3d query(uniform(rng, -12, 12), uniform(rng, -12, 12), uniform(rng, -12, 12));
    Eigen::Index best = 0;
    (pts.colwise() - query).colwise().squaredNorm().minCoeff(&best);
    const auto nn = tree.nearest(query);
    ASSERT_TRUE(nn.has_value());
    EXPECT_EQ(nn->index, best);
    const double r = uniform(rng, 0.5, 4.0);
    std::vector<Eigen::Index> brute;
    for (Eigen::Index i = 0; i < pts.cols(); ++i) {
      if ((pts.col(i) - query).norm() <= r) brute.push_back(i);
    }
    EXPECT_EQ(tree.radius_search(query, r), brute);
    const auto gated = tree.nearest(query, 0.01);
    if (gated) EXPECT_LE(std::sqrt(gated->squared_distance), 0.01);
  }
  EXPECT_FALSE(KdTree().nearest(Eigen::Vector3d::Zero()).has_value());
}

TEST(Assignment, OptimalAgainstBruteForce) {
  Rng rng(15);
  for (int trial = 0; trial < 300; ++trial) {
    const int rows = test::uniform_int(rng, 0, 6);
    const int cols = test::uniform_int(rng, 0, 6);
    Eigen::MatrixXd cost(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) cost(r, c) = uniform(rng, 0, 10);
    const double gate = 5.0;
    const Assignment a = solve_assignment(cost, gate);
    // brute force: every row picks an unused allowed column or none
    int best_matched = 0;
    double best_cost = 0;
    std::vector<bool> used(static_cast<std::size_t>(cols), false);
    std::function<void(int, int, double)> search = [&](int r, int m, double c) {
      if (r == rows) {
        if (m > best_matched || (m == best_matched && c < best_cost)) {
          best_matched = m;
          best_cost = c;
        }
        return;
      }
      search(r + 1, m, c);
      for (int col = 0; col < cols; ++col) {
        if (used[static_cast<std::size_t>(col)] || cost(r, col) > gate) continue;
        used[static_cast<std::size_t>(col)] = true;
        search(r + 1, m + 1, c + cost(r, col));
        used[static_cast<std::size_t>(col)] = false;
      }
    };
    search(0, 0, 0.0);
    EXPECT_EQ(a.matched, best_matched);
    EXPECT_NEAR(a.total_cost, best_cost, 1e-9);
    for (int r = 0; r < rows; ++r) {
      const int c = a.row_to_col[static_cast<std::size_t>(r)];
      if (c >= 0) {
        EXPECT_EQ(a.col_to_row[static_cast<std::size_t>(c)], r);
        EXPECT_LE(cost(r, c), gate);
      }
    }
  }
}

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "v2x/registration.hpp"
#include "v2x/synth.hpp"

using namespace v2x;
using v2x::test::Rng;
using v2x::test::uniform;

namespace {

RegistrationResult coarse_then_icp(const RegistrationScene& scene) {
  const Pose coarse = rigid_from_correspondences(scene.picked).pose;
  RegistrationResult r = icp_point_to_point(scene.source, scene.target, coarse);
  for (double gate : {1.0, 0.5, 0.25}) {
    IcpParams p;
    p.correspondence_max_dist = gate;
    r = icp_point_to_point(scene.source, scene.target, r.pose, p);
  }
  return r;
}

}  // namespace

TEST(RigidFit, ExactOnNoiselessPairs) {
  Rng rng(30);
  for (int i = 0; i < 200; ++i) {
    const Pose truth = test::random_pose(rng, 30.0);
    const Eigen::Matrix3Xd src = Eigen::Matrix3Xd::Random(3, test::uniform_int(rng, 3, 40)) * 20;
    const RigidFit fit = rigid_from_correspondences(src, truth.apply(src));
    const Eigen::Matrix3d r = fit.pose.rotation_matrix();
    EXPECT_LE((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_GT(r.determinant(), 0.0);
    EXPECT_LE(rotation_angle(fit.pose.rotation, truth.rotation), 1e-9);
    EXPECT_LE((fit.pose.translation - truth.translation).norm(), 1e-8);
    EXPECT_LE(fit.rmse, 1e-8);
  }
}

TEST(RigidFit, ReflectionIsNotReturned) {
  // mirrored target: the best proper rotation still has det +1
  Eigen::Matrix3Xd src(3, 4);
  src << 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1;
  Eigen::Matrix3Xd dst = src;
  dst.row(2) *= -1;
  const RigidFit fit = rigid_from_correspondences(src, dst);
  EXPECT_NEAR(fit.pose.rotation_matrix().determinant(), 1.0, 1e-12);
  EXPECT_GT(fit.rmse, 0.1);
}

TEST(RigidFit, RejectsDegenerateInput) {
  Eigen::Matrix3Xd line(3, 5);
  line << 0, 1, 2, 3, 4, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0;
  EXPECT_THROW(rigid_from_correspondences(line, line), EstimationError);
  EXPECT_THROW(rigid_from_correspondences(Eigen::Matrix3Xd::Random(3, 2), Eigen::Matrix3Xd::Random(3, 2)), EstimationError);
  EXPECT_THROW(rigid_from_correspondences(Eigen::Matrix3Xd::Random(3, 4), Eigen::Matrix3Xd::Random(3, 5)), EstimationError);
}

TEST(Gnss, CoarsePoseFromUtm) {
  const UtmPosition ref{{691000.0, 5335000.0, 520.0}, 32, true};
  const UtmPosition veh{{690980.0, 5335003.0, 518.0}, 32, true};
  const Eigen::Quaterniond imu = yaw_quaternion(0.3);
  const Pose p = coarse_from_gnss_imu(ref, veh, imu);
  EXPECT_TRUE(p.translation.isApprox(Eigen::Vector3d(-20, 3, -2)));
  EXPECT_LE(rotation_angle(p.rotation, imu), 1e-12);
  // infra frame rotated by 90 degrees about z relative to east/north/up
  const Pose q = coarse_from_gnss_imu(ref, veh, imu, yaw_quaternion(kPi / 2));
  EXPECT_LE((q.translation - Eigen::Vector3d(3, 20, -2)).norm(), 1e-9);
  EXPECT_NEAR(yaw_of(q.rotation), 0.3 - kPi / 2, 1e-12);
  EXPECT_THROW(coarse_from_gnss_imu(ref, UtmPosition{veh.position, 33, true}, imu), FrameError);
}

TEST(Icp, ValidatesParams) {
  IcpParams p;
  p.max_iterations = 0;
  EXPECT_THROW(validate(p), ConfigError);
  p = {};
  p.correspondence_max_dist = -1;
  EXPECT_THROW(validate(p), ConfigError);
  EXPECT_THROW(icp_point_to_point(PointCloud{}, PointCloud{}, Pose::identity()), RegistrationError);
}

TEST(Icp, ObjectiveNonIncreasingAndInvariants) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const RegistrationScene scene = synth_registration_scene(seed);
    const Pose coarse = rigid_from_correspondences(scene.picked).pose;
    const RegistrationResult r = icp_point_to_point(scene.source, scene.target, coarse);
    EXPECT_GE(r.rmse, 0.0);
    if (r.converged) EXPECT_LE(r.iterations, IcpParams{}.max_iterations);
    ASSERT_FALSE(r.objective_history.empty());
    for (std::size_t i = 1; i < r.objective_history.size(); ++i) {
      EXPECT_LE(r.objective_history[i], r.objective_history[i - 1] + 1e-15) << "seed " << seed << " round " << i;
    }
  }
}

TEST(Icp, RecoversSyntheticTransform) {
  int ok = 0;
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    const RegistrationScene scene = synth_registration_scene(seed);
    const RegistrationResult r = coarse_then_icp(scene);
    const double rot = rotation_angle(r.pose.rotation, scene.truth.rotation) * 180.0 / kPi;
    const double trans = (r.pose.translation - scene.truth.translation).norm();
    if (rot <= 0.5 && trans <= 0.05 && r.rmse <= 0.03) ++ok;
  }
  EXPECT_GE(ok, 19);
}

TEST(Icp, InvariantUnderCommonRigidTransform) {
  Rng rng(31);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const RegistrationScene scene = synth_registration_scene(seed);
    const Pose init = rigid_from_correspondences(scene.picked).pose;
    const RegistrationResult a = icp_point_to_point(scene.source, scene.target, init);

    // moving both clouds by G: the result becomes G a G^-1
    const Pose gi = test::random_pose(rng, 20.0, kInfraStream, kInfraStream);
    Pose gv = gi;
    gv.source_frame = gv.target_frame = kVehicleStream;
    PointCloud src = scene.source;
    PointCloud dst = scene.target;
    src.points = gv.apply(src.points);
    dst.points = gi.apply(dst.points);
    const Pose init_g = compose(compose(gi, init), invert(gv));
    const RegistrationResult b = icp_point_to_point(src, dst, init_g);
    const Pose expect = compose(compose(gi, a.pose), invert(gv));
    EXPECT_LE(rotation_angle(b.pose.rotation, expect.rotation), 1e-6) << seed;
    EXPECT_LE((b.pose.translation - expect.translation).norm(), 1e-6) << seed;
    EXPECT_NEAR(a.rmse, b.rmse, 1e-6);
  }
}

TEST(Icp, SubsampleBudget) {
  const RegistrationScene scene = synth_registration_scene(3, 2000);
  IcpParams p;
  p.subsample = 400;
  const RegistrationResult r = icp_point_to_point(scene.source, scene.target, rigid_from_correspondences(scene.picked).pose, p);
  EXPECT_LE(r.inliers, 400);
  EXPECT_LE(rotation_angle(r.pose.rotation, scene.truth.rotation), 2.0 * kPi / 180.0);
}

class SequenceRegistrationTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    SynthSceneConfig c;
    c.seed = 5;
    c.num_frames = 7;
    c.num_objects = 8;
    scene_ = new SynthScene(synth_scene(c));
  }
  static void TearDownTestSuite() { delete scene_; }
  static SynthScene* scene_;
};

SynthScene* SequenceRegistrationTest::scene_ = nullptr;

TEST_F(SequenceRegistrationTest, StrideAgreesWithDenseAtAnchors) {
  std::vector<Pose> coarse;
  for (const GnssFix& f : scene_->gnss) coarse.push_back(coarse_from_gnss_imu(scene_->infra_utm, f.position, f.imu));
  for (Pose& p : coarse) {
    p.source_frame = kVehicleStream;
    p.target_frame = kInfraStream;
  }
  const auto dense = register_sequence(scene_->vehicle_frames, scene_->infra_frames, coarse, 1, {}, {1.0, 0.5});
  const auto sparse = register_sequence(scene_->vehicle_frames, scene_->infra_frames, coarse, 3, {}, {1.0, 0.5});
  EXPECT_EQ(sparse.anchor_indices, (std::vector<std::size_t>{0, 3, 6}));
  for (std::size_t a : sparse.anchor_indices) {
    EXPECT_TRUE(sparse.is_anchor[a]);
    EXPECT_EQ(sparse.poses[a].rotation.coeffs(), dense.poses[a].rotation.coeffs());
    EXPECT_EQ(sparse.poses[a].translation, dense.poses[a].translation);
  }
  EXPECT_FALSE(sparse.is_anchor[1]);
  for (std::size_t i = 0; i < scene_->t_vi.size(); ++i) {
    EXPECT_LE((dense.poses[i].translation - scene_->t_vi[i].translation).norm(), 0.1) << i;
    EXPECT_LE(rotation_angle(dense.poses[i].rotation, scene_->t_vi[i].rotation), 0.5 * kPi / 180.0) << i;
    // interpolated frames stay close: the ego moves at constant velocity
    EXPECT_LE((sparse.poses[i].translation - scene_->t_vi[i].translation).norm(), 0.15) << i;
  }
}

TEST_F(SequenceRegistrationTest, RejectsBadInput) {
  const std::vector<Pose> coarse{Pose::identity()};
  EXPECT_THROW(register_sequence(scene_->vehicle_frames, {}, coarse), RegistrationError);
  EXPECT_THROW(register_sequence(scene_->vehicle_frames, scene_->infra_frames, coarse, 0), ConfigError);
  EXPECT_THROW(register_sequence(scene_->vehicle_frames, scene_->infra_frames, coarse, 2, {}, {0.0}), ConfigError);
  EXPECT_THROW(register_sequence(scene_->vehicle_frames, scene_->infra_frames, {coarse[0], coarse[0]}), RegistrationError);
}

TEST(Merge, KeepsOriginAndFrames) {
  PointCloud infra;
  infra.frame_id = "infra";
  infra.points = Eigen::Matrix3Xd::Random(3, 5);
  PointCloud veh;
  veh.frame_id = "veh";
  veh.points = Eigen::Matrix3Xd::Random(3, 3);
  veh.intensity = Eigen::VectorXd::Constant(3, 7.0);
  Pose t = Pose::identity("veh", "infra");
  t.translation = {10, 0, 0};
  const MergedCloud m = merge_clouds(infra, veh, t);
  ASSERT_EQ(m.cloud.size(), 8);
  EXPECT_EQ(m.cloud.frame_id, "infra");
  EXPECT_EQ(m.origin[4], PointOrigin::Infra);
  EXPECT_EQ(m.origin[5], PointOrigin::Vehicle);
  EXPECT_TRUE(m.cloud.points.col(5).isApprox(veh.points.col(0) + Eigen::Vector3d(10, 0, 0)));
  EXPECT_EQ(m.cloud.intensity(0), 0.0);
  EXPECT_EQ(m.cloud.intensity(7), 7.0);
  EXPECT_THROW(merge_clouds(infra, veh, Pose::identity("other", "infra")), FrameError);
}

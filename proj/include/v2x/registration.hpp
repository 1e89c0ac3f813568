#pragma once

// Vehicle <-> infrastructure registration: closed-form rigid fits, GNSS/IMU
// coarse alignment, point-to-point ICP and per-frame pose propagation.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "v2x/geometry.hpp"

namespace v2x {

struct PointPair {
  Eigen::Vector3d source;
  Eigen::Vector3d target;
};

struct RigidFit {
  Pose pose;          ///< maps source points onto target points
  double rmse = 0.0;  ///< residual after the fit
};

/// Least-squares rotation and translation (no scale) via SVD. Needs at least
/// three pairs whose source points are not collinear.
RigidFit rigid_from_correspondences(std::span<const PointPair> pairs);
RigidFit rigid_from_correspondences(const Eigen::Matrix3Xd& source, const Eigen::Matrix3Xd& target);

struct UtmPosition {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();  ///< easting, northing, altitude
  int zone = 0;
  bool northern = true;
};

/// Initial vehicle -> infrastructure transform from GNSS and IMU.
/// The translation is sensor - reference, expressed in the reference axes
/// (`reference_rotation` is the reference frame's orientation in UTM, identity
/// when the infrastructure frame is aligned with east/north/up). The rotation
/// is the IMU orientation relative to the same axes.
Pose coarse_from_gnss_imu(const UtmPosition& reference, const UtmPosition& sensor,
                          const Eigen::Quaterniond& imu_rotation,
                          const Eigen::Quaterniond& reference_rotation = Eigen::Quaterniond::Identity());

struct IcpParams {
  int max_iterations = 50;
  double correspondence_max_dist = 2.0;
  double convergence_eps = 1e-6;
  std::optional<Eigen::Index> subsample;  ///< source point budget (even stride)
};

void validate(const IcpParams& params);

struct RegistrationResult {
  Pose pose;                ///< source -> target
  double rmse = 0.0;        ///< over correspondences inside the gate, at `pose`
  int iterations = 0;       ///< correspondence/update rounds performed
  bool converged = false;
  Eigen::Index inliers = 0;
  std::vector<double> rmse_history;
  /// Mean of min(d^2, gate^2) over all source points, one entry per round.
  /// Non-increasing on every run; checked internally.
  std::vector<double> objective_history;
};

RegistrationResult icp_point_to_point(const PointCloud& source, const PointCloud& target, const Pose& init,
                                      const IcpParams& params = {});

struct SequenceRegistration {
  std::vector<Pose> poses;  ///< one per vehicle frame, vehicle -> infrastructure
  std::vector<bool> is_anchor;
  std::vector<RegistrationResult> anchors;  ///< in anchor order
  std::vector<std::size_t> anchor_indices;
};

/// Anchor frames are 0, s, 2s, ... and the last frame. Each anchor runs ICP
/// from its own coarse pose (`coarse` holds one pose per frame, or a single
/// pose used for all). Other frames interpolate between the bracketing
/// anchors with t taken from the vehicle timestamps. Anchors run in parallel.
/// Each entry of `refine_gates` re-runs ICP from the previous result with that
/// correspondence gate; the reported result is the last stage.
SequenceRegistration register_sequence(const std::vector<PointCloud>& vehicle_frames,
                                       const std::vector<PointCloud>& infra_frames,
                                       const std::vector<Pose>& coarse, int anchor_stride = 10,
                                       const IcpParams& params = {}, const std::vector<double>& refine_gates = {});

enum class PointOrigin : std::uint8_t { Infra = 0, Vehicle = 1 };

struct MergedCloud {
  PointCloud cloud;  ///< in the infrastructure frame, infra points first
  std::vector<PointOrigin> origin;
};

MergedCloud merge_clouds(const PointCloud& infra, const PointCloud& vehicle, const Pose& t_vi);

}  // namespace v2x

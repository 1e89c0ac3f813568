#pragma once

// SORT-style 3D multi-object tracker: constant-velocity Kalman filter per
// track, gated optimal assignment on ground-plane center distance.

#include <Eigen/Core>

#include <vector>

#include "v2x/bev_fusion.hpp"
#include "v2x/geometry.hpp"

namespace v2x {

struct TrackerParams {
  double gate_dist = 5.0;
  int max_age = 3;   ///< frames without an update before a track is dropped
  int min_hits = 2;  ///< updates (creation included) before a track is reported
  double process_noise = 1.0;      ///< scales the process covariance
  double measurement_noise = 1.0;  ///< scales the measurement covariance
  bool category_aware = true;
};

void validate(const TrackerParams& params);

/// State (x, y, z, yaw, l, w, h, vx, vy, vz), one step per frame.
struct Track {
  using State = Eigen::Matrix<double, 10, 1>;
  using Covariance = Eigen::Matrix<double, 10, 10>;

  State x = State::Zero();
  Covariance P = Covariance::Identity();
  long id = 0;
  int hits = 0;
  int age = 0;
  int time_since_update = 0;
  Category category = Category::Other;
  std::optional<double> score;  ///< from the last matched detection
  std::string frame_id;

  Box3D box() const;
};

struct TrackerState {
  std::vector<Track> tracks;
  long next_id = 0;
};

struct TrackStepResult {
  TrackerState state;
  std::vector<Box3D> outputs;  ///< confirmed tracks updated this frame, track_id set
};

TrackStepResult track_step(const TrackerState& state, const std::vector<Box3D>& detections,
                           const TrackerParams& params = {});

/// Fold of track_step over frames; one output list per input frame.
std::vector<std::vector<Box3D>> track_sequence(const std::vector<std::vector<Box3D>>& detections,
                                               const TrackerParams& params = {});

}  // namespace v2x

#pragma once

// Seeded synthetic V2X scenes: a crossing of two roads seen by an elevated
// infrastructure LiDAR at the world origin and by a LiDAR on an ego car.
// World frame = infrastructure sensor frame; the ground is at -infra_height.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "v2x/openlabel.hpp"
#include "v2x/registration.hpp"

namespace v2x {

inline constexpr const char* kVehicleStream = "vehicle_lidar";
inline constexpr const char* kInfraStream = "infra_lidar";

struct SynthObject {
  std::string id;
  Box3D box;  ///< at frame 0, world frame; z is placed on the ground when `on_ground`
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();  ///< m/s
  bool on_ground = true;
};

struct SynthSceneConfig {
  std::uint64_t seed = 0;
  int num_frames = 10;
  std::int64_t frame_interval_us = 100'000;
  std::int64_t timestamp_jitter_us = 25'000;  ///< infra capture jitter, uniform +-

  int num_objects = 12;  ///< random road users besides ego and `objects`
  std::map<Category, double> class_mix{{Category::Car, 0.45}, {Category::Van, 0.1}, {Category::Truck, 0.1},
                                       {Category::Bus, 0.05}, {Category::Pedestrian, 0.2}, {Category::Bicycle, 0.1}};
  double placement_radius = 45.0;
  double min_gap = 1.5;  ///< between object footprints, any frame

  Eigen::Vector2d ego_start{-22.0, -1.75};
  double ego_yaw = 0.0;
  double ego_speed = 6.0;
  double sensor_height = 1.85;  ///< vehicle LiDAR above ground
  double infra_height = 6.0;

  double vehicle_range = 60.0;
  double infra_range = 80.0;
  double vehicle_ref_range = 10.0;  ///< full density inside, (ref / r)^2 beyond
  double infra_ref_range = 20.0;
  double surface_spacing = 0.1;  ///< mean spacing of surface samples (m)
  double noise_sigma = 0.01;
  bool ground_points = true;
  double ground_spacing = 1.0;

  std::vector<SynthObject> objects;  ///< fixed placements (occluders, targets)

  double gnss_sigma = 0.3;       ///< m, horizontal
  double imu_yaw_sigma = 0.01;   ///< rad
  UtmPosition infra_utm{{691'000.0, 5'335'000.0, 520.0}, 32, true};
};

void validate(const SynthSceneConfig& config);

struct ObjectVisibility {
  std::string id;
  Category category = Category::Other;
  std::size_t vehicle_points = 0;
  std::size_t infra_points = 0;
  bool is_ego = false;
  /// no vehicle points, at least 50 infrastructure points, not the ego car
  bool vehicle_occluded = false;
};

struct GnssFix {
  UtmPosition position;  ///< vehicle LiDAR
  Eigen::Quaterniond imu = Eigen::Quaterniond::Identity();  ///< vehicle orientation in east/north/up
};

struct SynthScene {
  std::vector<PointCloud> vehicle_frames;  ///< vehicle sensor frame
  std::vector<PointCloud> infra_frames;    ///< infrastructure (world) frame
  Sequence ground_truth;                   ///< labels in the infrastructure frame
  std::vector<Pose> t_vi;                  ///< true vehicle -> infrastructure, per frame
  std::vector<GnssFix> gnss;
  UtmPosition infra_utm;
  std::vector<std::vector<ObjectVisibility>> visibility;  ///< per frame, per object
};

/// Bit-reproducible for a given config. Frames are generated in parallel with
/// per-(seed, frame, object) random streams.
SynthScene synth_scene(const SynthSceneConfig& config);

/// A scene with one object hidden from the ego car by a truck on the line of
/// sight, while the infrastructure sensor sees at least 50 points on it.
SynthSceneConfig occlusion_scene_config(std::uint64_t seed);

struct RegistrationScene {
  PointCloud source;  ///< vehicle frame
  PointCloud target;  ///< infrastructure frame
  Pose truth;         ///< source -> target
  std::vector<PointPair> picked;  ///< hand-picked style pairs (noisy)
};

/// About `points` points on boxes and a ground patch, a random transform with
/// |yaw| <= max_yaw and |t| <= max_translation. Per-point noise sigma goes on
/// the source cloud only; the target plays the clean reference map.
RegistrationScene synth_registration_scene(std::uint64_t seed, int points = 500, double noise_sigma = 0.01,
                                           double max_yaw = 15.0 * kPi / 180.0, double max_translation = 5.0,
                                           int picked_pairs = 10);

/// Seed mixing used by the generator (splitmix64 of the combined words).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace v2x

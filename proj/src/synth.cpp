#include "v2x/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <mutex>
#include <random>
#include <thread>

namespace v2x {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed);
  h = mix(h ^ a);
  h = mix(h ^ b);
  h = mix(h ^ c);
  return h;
}

namespace {

constexpr std::uint64_t kPlacementStream = 0x706c6163;
constexpr std::uint64_t kGroundStream = 0x67726e64;
constexpr std::uint64_t kJitterStream = 0x6a697474;
constexpr std::uint64_t kGnssStream = 0x676e7373;

std::uint64_t id_hash(const std::string& id) {
  // FNV-1a, stable across platforms unlike std::hash
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : id) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct Placed {
  std::string id;
  Box3D box;
  Eigen::Vector3d velocity;
  bool is_ego = false;
};

Box3D at_time(const Placed& p, double t) {
  Box3D b = p.box;
  b.center += p.velocity * t;
  return b;
}

/// True when the open segment a -> b passes through the box interior.
bool segment_hits_box(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Box3D& box) {
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  auto local = [&](const Eigen::Vector3d& p) {
    const Eigen::Vector3d d = p - box.center;
    return Eigen::Vector3d(c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z());
  };
  const Eigen::Vector3d p0 = local(a);
  const Eigen::Vector3d dir = local(b) - p0;
  const Eigen::Vector3d half = box.dimensions / 2;
  double t0 = 1e-6;
  double t1 = 1.0 - 1e-6;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(dir(k)) < 1e-15) {
      if (p0(k) <= -half(k) || p0(k) >= half(k)) return false;
      continue;
    }
    double ta = (-half(k) - p0(k)) / dir(k);
    double tb = (half(k) - p0(k)) / dir(k);
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 >= t1) return false;
  }
  return true;
}

Eigen::Vector3d dims_for(Category c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  auto j = [&](double mean, double sd) { return mean + sd * std::clamp(n(rng), -2.0, 2.0); };
  switch (c) {
    case Category::Car: return {j(4.4, 0.25), j(1.82, 0.06), j(1.5, 0.06)};
    case Category::Van: return {j(5.1, 0.2), j(2.0, 0.05), j(2.35, 0.08)};
    case Category::Truck: return {j(8.5, 0.6), j(2.5, 0.05), j(3.4, 0.15)};
    case Category::Trailer: return {j(12.0, 0.5), j(2.55, 0.05), j(3.8, 0.1)};
    case Category::Bus: return {j(12.2, 0.3), j(2.55, 0.03), j(3.2, 0.08)};
    case Category::Motorcycle: return {j(2.2, 0.08), j(0.8, 0.04), j(1.45, 0.05)};
    case Category::Bicycle: return {j(1.7, 0.05), j(0.6, 0.04), j(1.65, 0.05)};
    case Category::Pedestrian: return {j(0.6, 0.05), j(0.6, 0.05), j(1.75, 0.08)};
    case Category::Other: return {j(1.0, 0.1), j(1.0, 0.1), j(1.0, 0.1)};
  }
  return {1, 1, 1};
}

double speed_for(Category c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  switch (c) {
    case Category::Pedestrian: return 0.8 + 1.0 * u(rng);
    case Category::Bicycle: return 3.0 + 3.0 * u(rng);
    case Category::Truck:
    case Category::Bus:
    case Category::Trailer: return 3.0 + 6.0 * u(rng);
    default: return 4.0 + 8.0 * u(rng);
  }
}

bool footprints_clash(const Placed& a, const Placed& b, int frames, double dt, double gap) {
  for (int f = 0; f < frames; ++f) {
    Box3D ba = at_time(a, f * dt);
    Box3D bb = at_time(b, f * dt);
    ba.dimensions.head<2>().array() += gap;
    bb.dimensions.head<2>().array() += gap;
    if ((ba.center - bb.center).head<2>().norm() > (ba.dimensions.head<2>().norm() + bb.dimensions.head<2>().norm()) / 2) {
      continue;
    }
    if (bev_intersection_area(ba, bb) > 0) return true;
  }
  return false;
}

struct Candidate {
  Eigen::Vector3d point;
  Eigen::Vector3d normal;
};

/// Surface samples on the four sides and the top, in world coordinates.
std::vector<Candidate> surface_samples(const Box3D& box, double spacing, std::mt19937_64& rng) {
  std::vector<Candidate> out;
  const double l = box.length(), w = box.width(), h = box.height();
  const Eigen::Matrix3d r = yaw_quaternion(box.yaw).toRotationMatrix();
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  struct Face {
    Eigen::Vector3d normal, axis_a, axis_b;
    double offset, size_a, size_b;
  };
  const Face faces[] = {
      {Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitY(), Eigen::Vector3d::UnitZ(), l / 2, w, h},
      {-Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitY(), Eigen::Vector3d::UnitZ(), l / 2, w, h},
      {Eigen::Vector3d::UnitY(), Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitZ(), w / 2, l, h},
      {-Eigen::Vector3d::UnitY(), Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitZ(), w / 2, l, h},
      {Eigen::Vector3d::UnitZ(), Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitY(), h / 2, l, w},
  };
  for (const Face& f : faces) {
    const auto n = static_cast<int>(std::lround(f.size_a * f.size_b / (spacing * spacing)));
    for (int k = 0; k < n; ++k) {
      const Eigen::Vector3d local = f.normal * f.offset + f.axis_a * (u(rng) * f.size_a) + f.axis_b * (u(rng) * f.size_b);
      out.push_back({r * local + box.center, r * f.normal});
    }
  }
  return out;
}

struct SensorModel {
  Eigen::Vector3d origin;
  double range;
  double ref_range;
  const Placed* ignore = nullptr;  ///< ego car for the vehicle sensor
};

struct FrameOutput {
  PointCloud vehicle;
  PointCloud infra;
  Frame labels;
  Pose t_vi;
  GnssFix gnss;
  std::vector<ObjectVisibility> visibility;
};

std::vector<Placed> place_objects(const SynthSceneConfig& cfg) {
  const double dt = static_cast<double>(cfg.frame_interval_us) * 1e-6;
  const double ground = -cfg.infra_height;
  std::vector<Placed> placed;

  Placed ego;
  ego.id = "ego";
  ego.is_ego = true;
  ego.box.category = Category::Car;
  ego.box.dimensions = {4.5, 1.85, 1.5};
  ego.box.yaw = normalize_angle(cfg.ego_yaw);
  ego.box.center << cfg.ego_start, ground + 0.75;
  ego.velocity << cfg.ego_speed * std::cos(cfg.ego_yaw), cfg.ego_speed * std::sin(cfg.ego_yaw), 0.0;
  placed.push_back(ego);

  int fixed = 0;
  for (const SynthObject& o : cfg.objects) {
    Placed p;
    p.id = o.id.empty() ? "fixed_" + std::to_string(fixed) : o.id;
    p.box = o.box;
    p.box.yaw = normalize_angle(p.box.yaw);
    if (o.on_ground) p.box.center.z() = ground + p.box.height() / 2;
    p.velocity = o.velocity;
    placed.push_back(p);
    ++fixed;
  }

  std::mt19937_64 rng(derive_seed(cfg.seed, kPlacementStream));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::pair<Category, double>> mix(cfg.class_mix.begin(), cfg.class_mix.end());
  double mix_total = 0;
  for (const auto& [c, w] : mix) mix_total += w;

  for (int k = 0; k < cfg.num_objects; ++k) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      double pick = u(rng) * mix_total;
      Category c = mix.back().first;
      for (const auto& [cat, wt] : mix) {
        if (pick < wt) {
          c = cat;
          break;
        }
        pick -= wt;
      }
      Placed p;
      p.id = "obj_" + std::to_string(k);
      p.box.category = c;
      p.box.dimensions = dims_for(c, rng);
      const bool along_x = u(rng) < 0.5;
      const bool forward = u(rng) < 0.5;
      double offset;
      if (c == Category::Pedestrian) offset = (forward ? -1 : 1) * (5.5 + 1.0 * u(rng));
      else if (c == Category::Bicycle) offset = (forward ? -1 : 1) * 4.0;
      else offset = (forward ? -1 : 1) * 1.75;
      const double pos = (2 * u(rng) - 1) * cfg.placement_radius;
      const double heading = along_x ? (forward ? 0.0 : kPi) : (forward ? kPi / 2 : -kPi / 2);
      // right-hand traffic: lane offset to the right of the heading
      Eigen::Vector2d center = along_x ? Eigen::Vector2d(pos, offset) : Eigen::Vector2d(-offset, pos);
      if (center.norm() > cfg.placement_radius) continue;
      p.box.center << center, ground + p.box.height() / 2;
      p.box.yaw = normalize_angle(heading);
      const double v = speed_for(c, rng);
      p.velocity << v * std::cos(heading), v * std::sin(heading), 0.0;
      bool clash = false;
      for (const Placed& q : placed) {
        if (footprints_clash(p, q, cfg.num_frames, dt, cfg.min_gap)) {
          clash = true;
          break;
        }
      }
      if (clash) continue;
      placed.push_back(p);
      break;
    }
  }
  return placed;
}

FrameOutput render_frame(const SynthSceneConfig& cfg, const std::vector<Placed>& placed, int f) {
  const double t = static_cast<double>(f) * static_cast<double>(cfg.frame_interval_us) * 1e-6;
  const double ground = -cfg.infra_height;
  std::vector<Box3D> boxes;
  for (const Placed& p : placed) boxes.push_back(at_time(p, t));
  const Box3D& ego_box = boxes[0];

  FrameOutput out;
  out.t_vi.rotation = yaw_quaternion(ego_box.yaw);
  out.t_vi.translation << ego_box.center.head<2>(), ground + cfg.sensor_height;
  out.t_vi.source_frame = kVehicleStream;
  out.t_vi.target_frame = kInfraStream;

  const SensorModel sensors[2] = {
      {out.t_vi.translation, cfg.vehicle_range, cfg.vehicle_ref_range, &placed[0]},
      {Eigen::Vector3d::Zero(), cfg.infra_range, cfg.infra_ref_range, nullptr},
  };
  std::vector<Eigen::Vector3d> pts[2];
  std::vector<double> intensity[2];

  // bounding radius per box for a cheap pre-test on rays
  std::vector<double> radius;
  for (const Box3D& b : boxes) radius.push_back(b.dimensions.norm() / 2);

  auto occluded = [&](const SensorModel& s, const Eigen::Vector3d& p, std::size_t self) {
    const Eigen::Vector3d d = p - s.origin;
    const double len2 = d.squaredNorm();
    for (std::size_t k = 0; k < boxes.size(); ++k) {
      if (k == self || (s.ignore && k == 0)) continue;
      const Eigen::Vector3d oc = boxes[k].center - s.origin;
      const double proj = std::clamp(oc.dot(d) / len2, 0.0, 1.0);
      if ((oc - proj * d).norm() > radius[k]) continue;
      if (segment_hits_box(s.origin, p, boxes[k])) return true;
    }
    return false;
  };

  std::normal_distribution<double> noise(0.0, cfg.noise_sigma > 0 ? cfg.noise_sigma : 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double sigma_scale = cfg.noise_sigma > 0 ? 1.0 : 0.0;

  auto observe = [&](int si, const Candidate& c, std::size_t self, double base_intensity, std::mt19937_64& rng) {
    const SensorModel& s = sensors[si];
    // draws happen for every candidate so visibility never shifts the stream
    const double thin = unit(rng);
    const Eigen::Vector3d jitter(noise(rng), noise(rng), noise(rng));
    const double shade = unit(rng);
    const Eigen::Vector3d to_sensor = s.origin - c.point;
    const double r = to_sensor.norm();
    if (r > s.range || r < 0.5) return false;
    if (c.normal.dot(to_sensor) <= 0) return false;
    const double keep = std::min(1.0, (s.ref_range / r) * (s.ref_range / r));
    if (thin >= keep) return false;
    if (occluded(s, c.point, self)) return false;
    pts[si].push_back(c.point + sigma_scale * jitter);
    intensity[si].push_back(base_intensity + 0.05 * shade);
    return true;
  };

  out.labels.index = f;
  for (std::size_t k = 0; k < placed.size(); ++k) {
    std::mt19937_64 sample_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(f) + 1, id_hash(placed[k].id)));
    const std::vector<Candidate> cands = surface_samples(boxes[k], cfg.surface_spacing, sample_rng);
    ObjectVisibility vis;
    vis.id = placed[k].id;
    vis.category = boxes[k].category;
    vis.is_ego = placed[k].is_ego;
    for (int si = 0; si < 2; ++si) {
      std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(f) + 1, id_hash(placed[k].id), si + 1));
      const double base = 0.4 + 0.05 * static_cast<int>(boxes[k].category);
      std::size_t n = 0;
      for (const Candidate& c : cands) {
        if (si == 0 && placed[k].is_ego) continue;
        n += observe(si, c, k, base, rng);
      }
      (si == 0 ? vis.vehicle_points : vis.infra_points) = n;
    }
    vis.vehicle_occluded = !vis.is_ego && vis.vehicle_points == 0 && vis.infra_points >= 50;
    out.visibility.push_back(vis);

    Box3D label = boxes[k];
    label.track_id = placed[k].id;
    label.frame_id = kInfraStream;
    label.attributes["num_points"] = static_cast<double>(vis.vehicle_points + vis.infra_points);
    out.labels.labels.push_back(std::move(label));
  }

  if (cfg.ground_points) {
    std::mt19937_64 grng(derive_seed(cfg.seed, static_cast<std::uint64_t>(f) + 1, kGroundStream));
    std::uniform_real_distribution<double> jit(-0.5, 0.5);
    const double extent = std::max(cfg.vehicle_range, cfg.infra_range);
    const int n = static_cast<int>(std::floor(2 * extent / cfg.ground_spacing));
    std::mt19937_64 srng[2] = {std::mt19937_64(derive_seed(cfg.seed, static_cast<std::uint64_t>(f) + 1, kGroundStream, 1)),
                               std::mt19937_64(derive_seed(cfg.seed, static_cast<std::uint64_t>(f) + 1, kGroundStream, 2))};
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        Candidate c;
        c.point << -extent + (i + 0.5 + jit(grng)) * cfg.ground_spacing, -extent + (j + 0.5 + jit(grng)) * cfg.ground_spacing, ground;
        c.normal = Eigen::Vector3d::UnitZ();
        for (int si = 0; si < 2; ++si) {
          if (si == 0) {
            // the roof-mounted sensor cannot see the road under its own car
            Box3D under = ego_box;
            under.dimensions.z() = 1e3;
            const double cy = std::cos(under.yaw), sy = std::sin(under.yaw);
            const Eigen::Vector2d d = c.point.head<2>() - under.center.head<2>();
            if (std::abs(cy * d.x() + sy * d.y()) <= under.length() / 2 && std::abs(-sy * d.x() + cy * d.y()) <= under.width() / 2) {
              unit(srng[si]);
              noise(srng[si]);
              noise(srng[si]);
              noise(srng[si]);
              unit(srng[si]);
              continue;
            }
          }
          observe(si, c, boxes.size(), 0.1, srng[si]);
        }
      }
    }
  }

  auto to_cloud = [](const std::vector<Eigen::Vector3d>& p, const std::vector<double>& in) {
    PointCloud c;
    c.points.resize(3, static_cast<Eigen::Index>(p.size()));
    c.intensity.resize(static_cast<Eigen::Index>(p.size()));
    for (std::size_t k = 0; k < p.size(); ++k) {
      c.points.col(static_cast<Eigen::Index>(k)) = p[k];
      c.intensity(static_cast<Eigen::Index>(k)) = in[k];
    }
    return c;
  };
  const std::int64_t vehicle_ts = static_cast<std::int64_t>(f) * cfg.frame_interval_us;
  std::mt19937_64 jrng(derive_seed(cfg.seed, static_cast<std::uint64_t>(f) + 1, kJitterStream));
  std::uniform_int_distribution<std::int64_t> jitter(-cfg.timestamp_jitter_us, cfg.timestamp_jitter_us);
  const std::int64_t infra_ts = vehicle_ts + jitter(jrng);

  PointCloud world_vehicle = to_cloud(pts[0], intensity[0]);
  world_vehicle.frame_id = kInfraStream;
  out.vehicle = transform_points(world_vehicle, invert(out.t_vi));
  out.vehicle.frame_id = kVehicleStream;
  out.vehicle.timestamp_us = vehicle_ts;
  out.infra = to_cloud(pts[1], intensity[1]);
  out.infra.frame_id = kInfraStream;
  out.infra.timestamp_us = infra_ts;

  char name[32];
  std::snprintf(name, sizeof(name), "%06d.pcd", f);
  out.labels.timestamps_us[kVehicleStream] = vehicle_ts;
  out.labels.timestamps_us[kInfraStream] = infra_ts;
  out.labels.uris[kVehicleStream] = std::string("vehicle/") + name;
  out.labels.uris[kInfraStream] = std::string("infra/") + name;
  out.labels.transforms["t_vi"] = out.t_vi;

  std::mt19937_64 nrng(derive_seed(cfg.seed, static_cast<std::uint64_t>(f) + 1, kGnssStream));
  std::normal_distribution<double> gn(0.0, 1.0);
  out.gnss.position = cfg.infra_utm;
  out.gnss.position.position += out.t_vi.translation;
  out.gnss.position.position.x() += cfg.gnss_sigma * gn(nrng);
  out.gnss.position.position.y() += cfg.gnss_sigma * gn(nrng);
  out.gnss.imu = yaw_quaternion(ego_box.yaw + cfg.imu_yaw_sigma * gn(nrng));
  return out;
}

}  // namespace

void validate(const SynthSceneConfig& c) {
  if (c.num_frames < 1) throw ConfigError("synth: need at least one frame");
  if (c.num_objects < 0) throw ConfigError("synth: object count must be non-negative");
  if (c.frame_interval_us <= 0) throw ConfigError("synth: frame interval must be positive");
  if (c.timestamp_jitter_us < 0 || 2 * c.timestamp_jitter_us >= c.frame_interval_us) {
    throw ConfigError("synth: timestamp jitter must be below half the frame interval");
  }
  if (!(c.surface_spacing > 0) || !(c.ground_spacing > 0)) throw ConfigError("synth: sample spacing must be positive");
  if (c.noise_sigma < 0 || c.gnss_sigma < 0 || c.imu_yaw_sigma < 0) throw ConfigError("synth: noise must be non-negative");
  if (!(c.vehicle_range > 0) || !(c.infra_range > 0) || !(c.vehicle_ref_range > 0) || !(c.infra_ref_range > 0)) {
    throw ConfigError("synth: sensor ranges must be positive");
  }
  if (!(c.infra_height > 0) || !(c.sensor_height > 0)) throw ConfigError("synth: sensor heights must be positive");
  if (c.num_objects > 0) {
    double total = 0;
    for (const auto& [k, w] : c.class_mix) {
      if (w < 0) throw ConfigError("synth: class weights must be non-negative");
      total += w;
    }
    if (!(total > 0)) throw ConfigError("synth: class mix is empty");
  }
  for (const SynthObject& o : c.objects) validate(o.box);
}

SynthScene synth_scene(const SynthSceneConfig& config) {
  validate(config);
  const std::vector<Placed> placed = place_objects(config);
  const auto n = static_cast<std::size_t>(config.num_frames);
  std::vector<FrameOutput> frames(n);

  std::size_t next = 0;
  std::mutex m;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      std::size_t f;
      {
        std::lock_guard<std::mutex> lock(m);
        if (next >= n || error) return;
        f = next++;
      }
      try {
        frames[f] = render_frame(config, placed, static_cast<int>(f));
      } catch (...) {
        std::lock_guard<std::mutex> lock(m);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);

  SynthScene scene;
  scene.infra_utm = config.infra_utm;
  Sequence& seq = scene.ground_truth;
  seq.id = "synth-" + std::to_string(config.seed);
  seq.streams[kVehicleStream].kind = SensorKind::Lidar;
  seq.streams[kVehicleStream].description = "ego vehicle roof LiDAR";
  seq.streams[kInfraStream].kind = SensorKind::Lidar;
  seq.streams[kInfraStream].description = "infrastructure LiDAR, world frame";
  seq.tags["generator"] = "v2x synth";
  seq.tags["seed"] = std::to_string(config.seed);
  seq.tags["ground_z"] = std::to_string(-config.infra_height);
  for (FrameOutput& fo : frames) {
    scene.vehicle_frames.push_back(std::move(fo.vehicle));
    scene.infra_frames.push_back(std::move(fo.infra));
    seq.frames.push_back(std::move(fo.labels));
    scene.t_vi.push_back(fo.t_vi);
    scene.gnss.push_back(fo.gnss);
    scene.visibility.push_back(std::move(fo.visibility));
  }
  return scene;
}

SynthSceneConfig occlusion_scene_config(std::uint64_t seed) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    std::mt19937_64 rng(derive_seed(seed, 0x6f63636c, static_cast<std::uint64_t>(attempt)));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SynthSceneConfig cfg;
    cfg.seed = derive_seed(seed, 0x7363656e, static_cast<std::uint64_t>(attempt));
    cfg.num_frames = 1;
    cfg.num_objects = 6;
    cfg.ego_start = {-24.0 + 6.0 * u(rng), -1.75};
    cfg.ego_yaw = 0.0;
    cfg.ego_speed = 5.0;

    const Eigen::Vector2d sensor = cfg.ego_start;
    const double dist = 16.0 + 10.0 * u(rng);
    const double bearing = (u(rng) - 0.5) * 0.5;
    const Eigen::Vector2d target_xy = sensor + dist * Eigen::Vector2d(std::cos(bearing), std::sin(bearing));
    const double pick = u(rng);
    const Category target_cat = pick < 0.5 ? Category::Car : pick < 0.75 ? Category::Bicycle : Category::Pedestrian;

    SynthObject target;
    target.id = "target";
    target.box.category = target_cat;
    target.box.dimensions = target_cat == Category::Car ? Eigen::Vector3d(4.3, 1.8, 1.5)
                            : target_cat == Category::Bicycle ? Eigen::Vector3d(1.7, 0.6, 1.65)
                                                              : Eigen::Vector3d(0.6, 0.6, 1.75);
    target.box.center << target_xy, 0.0;
    target.box.yaw = u(rng) < 0.5 ? 0.0 : kPi / 2;

    SynthObject truck;
    truck.id = "occluder";
    truck.box.category = Category::Truck;
    truck.box.dimensions = {8.0, 2.5, 3.5};
    const double frac = 0.4 + 0.2 * u(rng);
    truck.box.center << sensor + frac * (target_xy - sensor), 0.0;
    truck.box.yaw = std::atan2(target_xy.y() - sensor.y(), target_xy.x() - sensor.x()) + kPi / 2;
    cfg.objects = {truck, target};

    // footprints must not overlap the ego car or each other
    Box3D ego;
    ego.center << cfg.ego_start, 0.0;
    ego.dimensions = {4.5 + cfg.min_gap, 1.85 + cfg.min_gap, 1.5};
    Box3D tb = target.box, kb = truck.box;
    tb.dimensions.head<2>().array() += cfg.min_gap;
    kb.dimensions.head<2>().array() += cfg.min_gap;
    tb.yaw = normalize_angle(tb.yaw);
    kb.yaw = normalize_angle(kb.yaw);
    if (bev_intersection_area(ego, kb) > 0 || bev_intersection_area(ego, tb) > 0 || bev_intersection_area(tb, kb) > 0) continue;

    const SynthScene scene = synth_scene(cfg);
    for (const ObjectVisibility& v : scene.visibility[0]) {
      if (v.id == "target" && v.vehicle_occluded) return cfg;
    }
  }
  throw Error("could not build an occlusion scene for seed " + std::to_string(seed));
}

RegistrationScene synth_registration_scene(std::uint64_t seed, int points, double noise_sigma, double max_yaw,
                                           double max_translation, int picked_pairs) {
  if (points < 10 || picked_pairs < 3 || picked_pairs > points) throw ConfigError("registration scene: bad sizes");
  std::mt19937_64 rng(derive_seed(seed, 0x72656773));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gn(0.0, 1.0);

  // a few upright boxes and a ground patch, sampled on their surfaces
  std::vector<Box3D> boxes;
  for (int k = 0; k < 6; ++k) {
    Box3D b;
    b.dimensions << 2.0 + 6.0 * u(rng), 1.5 + 2.0 * u(rng), 1.4 + 2.0 * u(rng);
    b.center << (2 * u(rng) - 1) * 20.0, (2 * u(rng) - 1) * 20.0, -6.0 + b.dimensions.z() / 2;
    b.yaw = normalize_angle((2 * u(rng) - 1) * kPi);
    boxes.push_back(b);
  }
  const int on_ground = points / 4;
  Eigen::Matrix3Xd world(3, points);
  int filled = 0;
  while (filled < points - on_ground) {
    const Box3D& b = boxes[static_cast<std::size_t>(filled) % boxes.size()];
    const std::vector<Candidate> c = surface_samples(b, 0.25, rng);
    world.col(filled++) = c[static_cast<std::size_t>(u(rng) * static_cast<double>(c.size())) % c.size()].point;
  }
  for (; filled < points; ++filled) world.col(filled) << (2 * u(rng) - 1) * 25.0, (2 * u(rng) - 1) * 25.0, -6.0;

  RegistrationScene s;
  const double yaw = (2 * u(rng) - 1) * max_yaw;
  Eigen::Vector3d dir(gn(rng), gn(rng), 0.2 * gn(rng));
  dir.normalize();
  s.truth.rotation = yaw_quaternion(yaw);
  s.truth.translation = dir * (max_translation * u(rng));
  s.truth.source_frame = kVehicleStream;
  s.truth.target_frame = kInfraStream;

  s.target.points = world;
  s.target.frame_id = kInfraStream;
  s.source.points = invert(s.truth).apply(world);
  for (Eigen::Index i = 0; i < s.source.points.cols(); ++i) {
    s.source.points.col(i) += noise_sigma * Eigen::Vector3d(gn(rng), gn(rng), gn(rng));
  }
  s.source.frame_id = kVehicleStream;

  std::vector<int> idx(static_cast<std::size_t>(points - on_ground));
  for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = static_cast<int>(k);
  std::shuffle(idx.begin(), idx.end(), rng);
  for (int k = 0; k < picked_pairs; ++k) {
    const int i = idx[static_cast<std::size_t>(k)];
    s.picked.push_back({s.source.points.col(i), s.target.points.col(i)});
  }
  return s;
}

}  // namespace v2x

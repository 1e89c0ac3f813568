#include "v2x/registration.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <exception>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "v2x/spatial_index.hpp"

namespace v2x {

namespace {

// Kabsch without degeneracy checks; ICP rounds may legitimately hit
// near-degenerate correspondence sets and still want the best rotation.
Pose kabsch(const Eigen::Matrix3Xd& src, const Eigen::Matrix3Xd& dst) {
  const Eigen::Vector3d ms = src.rowwise().mean();
  const Eigen::Vector3d md = dst.rowwise().mean();
  const Eigen::Matrix3d h = (src.colwise() - ms) * (dst.colwise() - md).transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d v = svd.matrixV();
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((v * u.transpose()).determinant() < 0) d(2, 2) = -1;
  const Eigen::Matrix3d r = v * d * u.transpose();
  Pose p;
  p.rotation = Eigen::Quaterniond(r).normalized();
  p.translation = md - p.rotation * ms;
  return p;
}

double residual_rmse(const Pose& p, const Eigen::Matrix3Xd& src, const Eigen::Matrix3Xd& dst) {
  if (src.cols() == 0) return 0.0;
  return std::sqrt((p.apply(src) - dst).colwise().squaredNorm().mean());
}

}  // namespace

RigidFit rigid_from_correspondences(const Eigen::Matrix3Xd& source, const Eigen::Matrix3Xd& target) {
  if (source.cols() != target.cols()) throw EstimationError("source and target point counts differ");
  if (source.cols() < 3) throw EstimationError("rigid fit needs at least 3 point pairs");
  if (!source.allFinite() || !target.allFinite()) throw EstimationError("non-finite point in rigid fit");
  const Eigen::Matrix3Xd centered = source.colwise() - source.rowwise().mean();
  Eigen::JacobiSVD<Eigen::Matrix3Xd> svd(centered);
  const Eigen::Vector3d sv = svd.singularValues();
  if (!(sv(1) > 1e-9 * sv(0))) throw EstimationError("source points are collinear or coincident");
  RigidFit fit;
  fit.pose = kabsch(source, target);
  fit.rmse = residual_rmse(fit.pose, source, target);
  return fit;
}

RigidFit rigid_from_correspondences(std::span<const PointPair> pairs) {
  Eigen::Matrix3Xd s(3, static_cast<Eigen::Index>(pairs.size()));
  Eigen::Matrix3Xd t(3, static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    s.col(static_cast<Eigen::Index>(i)) = pairs[i].source;
    t.col(static_cast<Eigen::Index>(i)) = pairs[i].target;
  }
  return rigid_from_correspondences(s, t);
}

Pose coarse_from_gnss_imu(const UtmPosition& reference, const UtmPosition& sensor,
                          const Eigen::Quaterniond& imu_rotation, const Eigen::Quaterniond& reference_rotation) {
  if (reference.zone != sensor.zone || reference.northern != sensor.northern) {
    throw FrameError("UTM zone mismatch: " + std::to_string(reference.zone) + (reference.northern ? "N" : "S") +
                     " vs " + std::to_string(sensor.zone) + (sensor.northern ? "N" : "S"));
  }
  require_unit(imu_rotation);
  require_unit(reference_rotation);
  const Eigen::Quaterniond to_ref = reference_rotation.conjugate();
  Pose p;
  p.rotation = (to_ref * imu_rotation).normalized();
  p.translation = to_ref * (sensor.position - reference.position);
  return p;
}

void validate(const IcpParams& params) {
  if (params.max_iterations < 1) throw ConfigError("ICP max_iterations must be positive");
  if (!(params.correspondence_max_dist > 0)) throw ConfigError("ICP correspondence_max_dist must be positive");
  if (!(params.convergence_eps > 0)) throw ConfigError("ICP convergence_eps must be positive");
  if (params.subsample && *params.subsample < 3) throw ConfigError("ICP subsample budget must be at least 3");
}

RegistrationResult icp_point_to_point(const PointCloud& source, const PointCloud& target, const Pose& init,
                                      const IcpParams& params) {
  validate(params);
  if (source.empty() || target.empty()) throw RegistrationError("ICP needs two non-empty clouds");

  Eigen::Matrix3Xd src = source.points;
  if (params.subsample && src.cols() > *params.subsample) {
    const Eigen::Index budget = *params.subsample;
    Eigen::Matrix3Xd sub(3, budget);
    for (Eigen::Index i = 0; i < budget; ++i) sub.col(i) = source.points.col(i * source.size() / budget);
    src = std::move(sub);
  }

  const KdTree tree(target.points);
  const double gate = params.correspondence_max_dist;
  const double gate2 = gate * gate;
  const Eigen::Index n = src.cols();

  Pose pose = init;
  pose.source_frame = source.frame_id.empty() ? init.source_frame : source.frame_id;
  pose.target_frame = target.frame_id.empty() ? init.target_frame : target.frame_id;

  struct Round {
    Eigen::Matrix3Xd from;
    Eigen::Matrix3Xd to;
    double rmse = 0.0;
    double objective = 0.0;
  };
  auto correspond = [&](const Pose& p) {
    const Eigen::Matrix3Xd moved = p.apply(src);
    std::vector<Eigen::Index> si, ti;
    si.reserve(static_cast<std::size_t>(n));
    ti.reserve(static_cast<std::size_t>(n));
    double inlier_sum = 0.0;
    double truncated_sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto nb = tree.nearest(moved.col(i), gate);
      if (!nb) {
        truncated_sum += gate2;
        continue;
      }
      si.push_back(i);
      ti.push_back(nb->index);
      inlier_sum += nb->squared_distance;
      truncated_sum += std::min(nb->squared_distance, gate2);
    }
    Round r;
    const auto m = static_cast<Eigen::Index>(si.size());
    r.from.resize(3, m);
    r.to.resize(3, m);
    for (Eigen::Index k = 0; k < m; ++k) {
      r.from.col(k) = moved.col(si[static_cast<std::size_t>(k)]);
      r.to.col(k) = target.points.col(ti[static_cast<std::size_t>(k)]);
    }
    r.rmse = m > 0 ? std::sqrt(inlier_sum / static_cast<double>(m)) : 0.0;
    r.objective = truncated_sum / static_cast<double>(n);
    return r;
  };

  RegistrationResult out;
  double prev_rmse = std::numeric_limits<double>::infinity();
  Round round;
  for (int it = 0; it < params.max_iterations; ++it) {
    round = correspond(pose);
    if (round.from.cols() == 0) {
      if (it == 0) throw RegistrationError("no correspondences within " + std::to_string(gate) + " m of the initial pose");
      break;
    }
    if (!out.objective_history.empty()) {
      const double last = out.objective_history.back();
      if (round.objective > last + 1e-12 * std::max(1.0, last)) {
        throw std::logic_error("ICP objective increased between rounds");
      }
    }
    out.rmse_history.push_back(round.rmse);
    out.objective_history.push_back(round.objective);
    out.rmse = round.rmse;
    out.inliers = round.from.cols();
    out.iterations = it + 1;
    if (it > 0 && std::abs(prev_rmse - round.rmse) < params.convergence_eps) {
      out.converged = true;
      break;
    }
    prev_rmse = round.rmse;
    if (round.from.cols() < 3) break;
    const Pose delta = kabsch(round.from, round.to);
    pose.rotation = (delta.rotation * pose.rotation).normalized();
    pose.translation = delta.rotation * pose.translation + delta.translation;
  }
  if (!out.converged) {
    // the loop ended on an update; report the residual of the final pose
    round = correspond(pose);
    out.rmse = round.rmse;
    out.inliers = round.from.cols();
  }
  out.pose = pose;
  return out;
}

SequenceRegistration register_sequence(const std::vector<PointCloud>& vehicle_frames,
                                       const std::vector<PointCloud>& infra_frames,
                                       const std::vector<Pose>& coarse, int anchor_stride,
                                       const IcpParams& params, const std::vector<double>& refine_gates) {
  if (anchor_stride < 1) throw ConfigError("anchor stride must be at least 1");
  if (vehicle_frames.size() != infra_frames.size()) {
    throw RegistrationError("vehicle and infrastructure frame counts differ (" + std::to_string(vehicle_frames.size()) +
                            " vs " + std::to_string(infra_frames.size()) + ")");
  }
  if (coarse.size() != 1 && coarse.size() != vehicle_frames.size()) {
    throw RegistrationError("expected one coarse pose or one per frame");
  }
  validate(params);
  for (double g : refine_gates) {
    if (!(g > 0)) throw ConfigError("refinement gates must be positive");
  }
  const std::size_t n = vehicle_frames.size();
  SequenceRegistration out;
  if (n == 0) return out;

  for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(anchor_stride)) out.anchor_indices.push_back(i);
  if (out.anchor_indices.back() != n - 1) out.anchor_indices.push_back(n - 1);

  const std::size_t na = out.anchor_indices.size();
  out.anchors.resize(na);
  std::vector<std::exception_ptr> errors(na);
  std::size_t next = 0;
  std::mutex m;
  auto worker = [&] {
    for (;;) {
      std::size_t a;
      {
        std::lock_guard<std::mutex> lock(m);
        if (next >= na) return;
        a = next++;
      }
      const std::size_t f = out.anchor_indices[a];
      try {
        RegistrationResult r =
            icp_point_to_point(vehicle_frames[f], infra_frames[f], coarse.size() == 1 ? coarse[0] : coarse[f], params);
        for (double gate : refine_gates) {
          IcpParams stage = params;
          stage.correspondence_max_dist = gate;
          r = icp_point_to_point(vehicle_frames[f], infra_frames[f], r.pose, stage);
        }
        out.anchors[a] = std::move(r);
      } catch (...) {
        errors[a] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min<std::size_t>(na, std::max(1u, std::thread::hardware_concurrency()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t a = 0; a < na; ++a) {
    if (!errors[a]) continue;
    try {
      std::rethrow_exception(errors[a]);
    } catch (const std::exception& e) {
      throw RegistrationError("anchor " + std::to_string(a) + " (frame " + std::to_string(out.anchor_indices[a]) +
                              "): " + e.what());
    }
  }

  out.poses.resize(n);
  out.is_anchor.assign(n, false);
  for (std::size_t a = 0; a < na; ++a) {
    out.poses[out.anchor_indices[a]] = out.anchors[a].pose;
    out.is_anchor[out.anchor_indices[a]] = true;
  }
  for (std::size_t a = 0; a + 1 < na; ++a) {
    const std::size_t i0 = out.anchor_indices[a];
    const std::size_t i1 = out.anchor_indices[a + 1];
    const double t0 = static_cast<double>(vehicle_frames[i0].timestamp_us);
    const double t1 = static_cast<double>(vehicle_frames[i1].timestamp_us);
    for (std::size_t i = i0 + 1; i < i1; ++i) {
      double t = static_cast<double>(i - i0) / static_cast<double>(i1 - i0);
      if (t1 > t0) t = std::clamp((static_cast<double>(vehicle_frames[i].timestamp_us) - t0) / (t1 - t0), 0.0, 1.0);
      out.poses[i] = interpolate_pose(out.poses[i0], out.poses[i1], t);
    }
  }
  return out;
}

MergedCloud merge_clouds(const PointCloud& infra, const PointCloud& vehicle, const Pose& t_vi) {
  if (!frames_match(t_vi.source_frame, vehicle.frame_id)) {
    throw FrameError("transform source '" + t_vi.source_frame + "' does not match vehicle cloud frame '" +
                     vehicle.frame_id + "'");
  }
  if (!frames_match(t_vi.target_frame, infra.frame_id)) {
    throw FrameError("transform target '" + t_vi.target_frame + "' does not match infrastructure cloud frame '" +
                     infra.frame_id + "'");
  }
  const Eigen::Index ni = infra.size();
  const Eigen::Index nv = vehicle.size();
  MergedCloud out;
  out.cloud.frame_id = infra.frame_id.empty() ? t_vi.target_frame : infra.frame_id;
  out.cloud.timestamp_us = infra.timestamp_us;
  out.cloud.points.resize(3, ni + nv);
  out.cloud.points.leftCols(ni) = infra.points;
  if (nv > 0) out.cloud.points.rightCols(nv) = t_vi.apply(vehicle.points);
  if (infra.has_intensity() || vehicle.has_intensity()) {
    out.cloud.intensity = Eigen::VectorXd::Zero(ni + nv);
    if (infra.has_intensity()) out.cloud.intensity.head(ni) = infra.intensity;
    if (vehicle.has_intensity()) out.cloud.intensity.tail(nv) = vehicle.intensity;
  }
  out.origin.assign(static_cast<std::size_t>(ni), PointOrigin::Infra);
  out.origin.insert(out.origin.end(), static_cast<std::size_t>(nv), PointOrigin::Vehicle);
  return out;
}

}  // namespace v2x

#include "v2x/tracking.hpp"

#include <Eigen/Cholesky>

#include <limits>

#include "v2x/assignment.hpp"

namespace v2x {

namespace {

using Vec7 = Eigen::Matrix<double, 7, 1>;
using Mat7 = Eigen::Matrix<double, 7, 7>;
using Mat10 = Track::Covariance;

Mat10 transition() {
  Mat10 f = Mat10::Identity();
  f(0, 7) = f(1, 8) = f(2, 9) = 1.0;
  return f;
}

Mat10 process_cov(double scale) {
  Track::State d;
  d << 0.1, 0.1, 0.1, 0.05, 0.01, 0.01, 0.01, 0.5, 0.5, 0.1;
  return (scale * d).asDiagonal();
}

Mat7 measurement_cov(double scale) {
  Vec7 d;
  d << 0.1, 0.1, 0.1, 0.05, 0.05, 0.05, 0.05;
  return (scale * d).asDiagonal();
}

Vec7 measure(const Box3D& b) {
  Vec7 z;
  z << b.center, b.yaw, b.dimensions;
  return z;
}

Track start(const Box3D& det, long id) {
  Track t;
  t.x.head<7>() = measure(det);
  t.P.setZero();
  t.P.diagonal() << 10, 10, 10, 10, 10, 10, 10, 1000, 1000, 1000;
  t.id = id;
  t.hits = 1;
  t.category = det.category;
  t.score = det.score;
  t.frame_id = det.frame_id;
  return t;
}

void predict(Track& t, const TrackerParams& p) {
  static const Mat10 f = transition();
  t.x = f * t.x;
  t.x(3) = normalize_angle(t.x(3));
  t.P = f * t.P * f.transpose() + process_cov(p.process_noise);
  ++t.age;
  ++t.time_since_update;
}

void update(Track& t, const Box3D& det, const TrackerParams& p) {
  Vec7 z = measure(det);
  // box headings from clustering are ambiguous by pi; a real object does not
  // turn more than 90 degrees between frames
  double dyaw = angle_difference(z(3), t.x(3));
  if (std::abs(dyaw) > kPi / 2) dyaw = angle_difference(z(3) + kPi, t.x(3));
  Vec7 y = z - t.x.head<7>();
  y(3) = dyaw;
  const Mat7 s = t.P.topLeftCorner<7, 7>() + measurement_cov(p.measurement_noise);
  const Eigen::Matrix<double, 10, 7> k = t.P.leftCols<7>() * s.inverse();
  t.x += k * y;
  t.x(3) = normalize_angle(t.x(3));
  Mat10 ikh = Mat10::Identity();
  ikh.leftCols<7>() -= k;
  // Joseph form keeps P symmetric positive semi-definite
  Eigen::Matrix<double, 10, 7> kr = k * measurement_cov(p.measurement_noise);
  t.P = ikh * t.P * ikh.transpose() + kr * k.transpose();
  t.P = 0.5 * (t.P + t.P.transpose()).eval();
  t.x.segment<3>(4) = t.x.segment<3>(4).cwiseMax(1e-3);
  t.time_since_update = 0;
  ++t.hits;
  t.score = det.score;
}

}  // namespace

void validate(const TrackerParams& p) {
  if (!(p.gate_dist > 0)) throw ConfigError("tracker gate_dist must be positive");
  if (p.max_age < 0) throw ConfigError("tracker max_age must be non-negative");
  if (p.min_hits < 1) throw ConfigError("tracker min_hits must be at least 1");
  if (!(p.process_noise > 0) || !(p.measurement_noise > 0)) throw ConfigError("tracker noise scales must be positive");
}

Box3D Track::box() const {
  Box3D b;
  b.center = x.head<3>();
  b.yaw = normalize_angle(x(3));
  b.dimensions = x.segment<3>(4);
  b.category = category;
  b.track_id = std::to_string(id);
  b.score = score;
  b.frame_id = frame_id;
  return b;
}

TrackStepResult track_step(const TrackerState& state, const std::vector<Box3D>& detections, const TrackerParams& params) {
  validate(params);
  TrackStepResult out;
  out.state = state;
  std::vector<Track>& tracks = out.state.tracks;
  for (Track& t : tracks) predict(t, params);

  const auto nt = static_cast<Eigen::Index>(tracks.size());
  const auto nd = static_cast<Eigen::Index>(detections.size());
  Eigen::MatrixXd cost(nt, nd);
  for (Eigen::Index i = 0; i < nt; ++i) {
    for (Eigen::Index j = 0; j < nd; ++j) {
      const Track& t = tracks[static_cast<std::size_t>(i)];
      const Box3D& d = detections[static_cast<std::size_t>(j)];
      if (params.category_aware && t.category != d.category) {
        cost(i, j) = std::numeric_limits<double>::infinity();
      } else {
        cost(i, j) = (t.x.head<2>() - d.center.head<2>()).norm();
      }
    }
  }
  const Assignment a = solve_assignment(cost, params.gate_dist);
  for (Eigen::Index i = 0; i < nt; ++i) {
    const int j = a.row_to_col[static_cast<std::size_t>(i)];
    if (j >= 0) update(tracks[static_cast<std::size_t>(i)], detections[static_cast<std::size_t>(j)], params);
  }
  for (Eigen::Index j = 0; j < nd; ++j) {
    if (a.col_to_row[static_cast<std::size_t>(j)] >= 0) continue;
    tracks.push_back(start(detections[static_cast<std::size_t>(j)], out.state.next_id++));
  }
  std::erase_if(tracks, [&](const Track& t) { return t.time_since_update > params.max_age; });
  for (const Track& t : tracks) {
    if (t.time_since_update == 0 && t.hits >= params.min_hits) {
      Box3D b = t.box();
      out.outputs.push_back(std::move(b));
    }
  }
  return out;
}

std::vector<std::vector<Box3D>> track_sequence(const std::vector<std::vector<Box3D>>& detections,
                                               const TrackerParams& params) {
  std::vector<std::vector<Box3D>> out;
  out.reserve(detections.size());
  TrackerState state;
  for (const auto& frame : detections) {
    TrackStepResult r = track_step(state, frame, params);
    out.push_back(std::move(r.outputs));
    state = std::move(r.state);
  }
  return out;
}

}  // namespace v2x

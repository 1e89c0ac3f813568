#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <set>

#include "test_util.hpp"
#include "v2x/evaluation.hpp"
#include "v2x/tracking.hpp"

using namespace v2x;
using v2x::test::Rng;
using v2x::test::uniform;

namespace {

// constant-velocity objects on a lattice, at least `spacing` apart at all times
FrameBoxes lattice_scene(Rng& rng, int objects, int frames, double spacing, double dt = 0.1) {
  std::vector<Eigen::Vector2d> start;
  std::vector<Eigen::Vector2d> vel;
  const Eigen::Vector2d v(uniform(rng, -10, 10), uniform(rng, -10, 10));
  for (int k = 0; k < objects; ++k) {
    start.emplace_back((k % 4) * spacing, (k / 4) * spacing);
    vel.push_back(v);  // common velocity keeps the spacing
  }
  FrameBoxes out(static_cast<std::size_t>(frames));
  for (int f = 0; f < frames; ++f) {
    for (int k = 0; k < objects; ++k) {
      Box3D b;
      b.center << start[static_cast<std::size_t>(k)] + vel[static_cast<std::size_t>(k)] * (f * dt), -5.0;
      b.dimensions = {4.5, 1.9, 1.6};
      b.yaw = std::atan2(v.y(), v.x());
      b.category = Category::Car;
      b.score = 0.9;
      b.track_id = "gt" + std::to_string(k);
      out[static_cast<std::size_t>(f)].push_back(b);
    }
  }
  return out;
}

FrameBoxes strip_ids(FrameBoxes f) {
  for (auto& frame : f)
    for (auto& b : frame) b.track_id.reset();
  return f;
}

}  // namespace

TEST(Tracker, ValidatesParams) {
  TrackerParams p;
  EXPECT_DOUBLE_EQ(p.gate_dist, 5.0);
  EXPECT_NO_THROW(validate(p));
  p.gate_dist = 0;
  EXPECT_THROW(validate(p), ConfigError);
  p = {};
  p.min_hits = 0;
  EXPECT_THROW(validate(p), ConfigError);
}

TEST(Tracker, NoiselessSeparatedObjectsAreTrackedPerfectly) {
  Rng rng(50);
  TrackerParams p;
  p.min_hits = 1;
  for (int trial = 0; trial < 20; ++trial) {
    const FrameBoxes gt = lattice_scene(rng, 8, 30, 2.5 * p.gate_dist);
    const auto tracks = track_sequence(strip_ids(gt), p);
    const TrackingEvalReport r = evaluate_tracking(tracks, gt);
    EXPECT_EQ(r.ids, 0u);
    EXPECT_DOUBLE_EQ(r.mota, 1.0);
    EXPECT_EQ(r.mt, 8u);
  }
}

TEST(Tracker, IdSurvivesOneFrameDropout) {
  Rng rng(51);
  FrameBoxes gt = lattice_scene(rng, 1, 12, 10);
  FrameBoxes dets = strip_ids(gt);
  dets[5].clear();
  TrackerParams p;
  p.max_age = 3;
  p.min_hits = 1;
  const auto out = track_sequence(dets, p);
  std::set<std::string> ids;
  for (std::size_t f = 0; f < out.size(); ++f) {
    if (f == 5) {
      EXPECT_TRUE(out[f].empty());
      continue;
    }
    ASSERT_EQ(out[f].size(), 1u) << f;
    ids.insert(*out[f][0].track_id);
  }
  EXPECT_EQ(ids.size(), 1u);
}

TEST(Tracker, TrackDroppedAfterMaxAge) {
  Rng rng(52);
  FrameBoxes dets = strip_ids(lattice_scene(rng, 1, 12, 10));
  for (int f = 3; f < 8; ++f) dets[static_cast<std::size_t>(f)].clear();
  TrackerParams p;
  p.max_age = 2;
  p.min_hits = 1;
  const auto out = track_sequence(dets, p);
  EXPECT_NE(*out[2][0].track_id, *out[8][0].track_id);
}

TEST(Tracker, MinHitsDelaysOutput) {
  Rng rng(53);
  const FrameBoxes dets = strip_ids(lattice_scene(rng, 2, 5, 20));
  TrackerParams p;
  p.min_hits = 3;
  const auto out = track_sequence(dets, p);
  EXPECT_TRUE(out[0].empty());
  EXPECT_TRUE(out[1].empty());
  EXPECT_EQ(out[2].size(), 2u);
}

TEST(Tracker, IdsNeverReusedAndCovarianceStaysPsd) {
  Rng rng(54);
  TrackerParams p;
  p.min_hits = 1;
  p.max_age = 1;
  TrackerState state;
  std::set<long> seen_dead;
  std::set<long> alive_before;
  for (int f = 0; f < 60; ++f) {
    std::vector<Box3D> dets;
    for (int k = 0, n = test::uniform_int(rng, 0, 6); k < n; ++k) dets.push_back(test::random_box(rng, 30));
    const TrackStepResult r = track_step(state, dets, p);
    std::set<long> alive_now;
    for (const Track& t : r.state.tracks) {
      alive_now.insert(t.id);
      EXPECT_EQ(seen_dead.count(t.id), 0u) << "id " << t.id << " reused";
      const Track::Covariance& P = t.P;
      EXPECT_LE((P - P.transpose()).cwiseAbs().maxCoeff(), 1e-9);
      Eigen::SelfAdjointEigenSolver<Track::Covariance> es(P);
      EXPECT_GE(es.eigenvalues().minCoeff(), -1e-9);
    }
    for (long id : alive_before) {
      if (!alive_now.count(id)) seen_dead.insert(id);
    }
    alive_before = alive_now;
    state = r.state;
  }
}

TEST(Tracker, CategoryAwareAssociation) {
  Box3D car;
  car.category = Category::Car;
  Box3D ped = car;
  ped.category = Category::Pedestrian;
  TrackerParams p;
  p.min_hits = 1;
  const auto aware = track_sequence({{car}, {ped}}, p);
  EXPECT_NE(*aware[0][0].track_id, *aware[1][0].track_id);
  p.category_aware = false;
  const auto agnostic = track_sequence({{car}, {ped}}, p);
  EXPECT_EQ(*agnostic[0][0].track_id, *agnostic[1][0].track_id);
}

TEST(Tracker, YawWrapsAcrossPi) {
  TrackerParams p;
  p.min_hits = 1;
  std::vector<std::vector<Box3D>> dets;
  for (int f = 0; f < 10; ++f) {
    Box3D b;
    b.center = {f * 0.5, 0, 0};
    b.yaw = normalize_angle(kPi - 0.05 + 0.01 * f);
    b.category = Category::Car;
    dets.push_back({b});
  }
  const auto out = track_sequence(dets, p);
  for (std::size_t f = 0; f < out.size(); ++f) {
    ASSERT_EQ(out[f].size(), 1u);
    EXPECT_LE(std::abs(angle_difference(out[f][0].yaw, dets[f][0].yaw)), 0.05) << f;
  }
}

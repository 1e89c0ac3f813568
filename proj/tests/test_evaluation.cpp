#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"
#include "test_util.hpp"
#include "v2x/evaluation.hpp"

using namespace v2x;
using namespace v2x::test;

TEST(Ap, FrozenHandValues) {
  // values from numpy.interp on the same curves
  EXPECT_NEAR(average_precision(pr_curve({true, false, true}, 2)), 0.7376543209876544, 1e-12);
  EXPECT_NEAR(average_precision(pr_curve({true, true, false, false, true}, 4)), 0.5777777777777778, 1e-12);
  EXPECT_NEAR(average_precision(pr_curve({false, true}, 1)), 0.2, 1e-12);
  EXPECT_EQ(average_precision(pr_curve({}, 3)), 0.0);
}

TEST(Ap, CurveBeyondMaxRecallIsZero) {
  const PrCurve c = pr_curve({true}, 2);
  ASSERT_EQ(c.recall.size(), 101u);
  EXPECT_EQ(c.precision[50], 1.0);
  EXPECT_EQ(c.precision[51], 0.0);
  EXPECT_EQ(c.precision[0], 1.0);
}

TEST(DetectionEval, MatchesBruteForceOracle) {
  Rng rng(60);
  DetectionEvalConfig cfg;
  for (int trial = 0; trial < 1000; ++trial) {
    const Instance in = random_instance(rng);
    cfg.classes = in.classes;
    const DetectionReport r = evaluate_detection_bev(in.preds, in.gts, cfg);
    double sum = 0;
    std::size_t cells = 0;
    for (const ClassResult& cr : r.classes) {
      for (std::size_t t = 0; t < cfg.distance_thresholds.size(); ++t) {
        const double o = oracle_ap(in.preds, in.gts, cr.category, cfg.distance_thresholds[t]);
        EXPECT_NEAR(cr.ap[t], o, 1e-9) << "trial " << trial << " class " << to_string(cr.category);
        sum += o;
        ++cells;
      }
    }
    EXPECT_NEAR(r.map, cells ? sum / cells : 0.0, 1e-9) << trial;
  }
}

TEST(DetectionEval, PerfectAndDisplacedPredictions) {
  Rng rng(61);
  FrameBoxes gts(3), perfect(3), shifted(3);
  for (std::size_t f = 0; f < 3; ++f) {
    for (Category c : {Category::Car, Category::Pedestrian}) {
      for (int k = 0; k < 4; ++k) {
        const Box3D g = at(k * 20.0, static_cast<double>(f) * 20 + (c == Category::Car ? 0 : 10), c);
        gts[f].push_back(g);
        Box3D p = g;
        p.score = uniform(rng, 0.1, 1.0);
        perfect[f].push_back(p);
        p.center.x() += 5.0;
        shifted[f].push_back(p);
      }
    }
  }
  const DetectionReport good = evaluate_detection_bev(perfect, gts);
  EXPECT_NEAR(good.map, 1.0, 1e-12);
  EXPECT_EQ(good.classes.size(), 2u);
  EXPECT_EQ(good.notices.size(), 6u);  // the other traffic classes have no GT
  const DetectionReport bad = evaluate_detection_bev(shifted, gts);
  EXPECT_EQ(bad.map, 0.0);
}

TEST(DetectionEval, MonotoneInThreshold) {
  Rng rng(62);
  for (int trial = 0; trial < 300; ++trial) {
    const Instance in = random_instance(rng);
    DetectionEvalConfig cfg;
    cfg.classes = in.classes;
    const DetectionReport r = evaluate_detection_bev(in.preds, in.gts, cfg);
    for (const ClassResult& cr : r.classes) {
      for (std::size_t t = 1; t < cr.ap.size(); ++t) EXPECT_GE(cr.ap[t], cr.ap[t - 1] - 1e-12) << trial;
    }
  }
}

TEST(DetectionEval, FalsePositivesNeverHelpTruePositivesNeverHurt) {
  Rng rng(63);
  for (int trial = 0; trial < 300; ++trial) {
    Instance in = random_instance(rng);
    DetectionEvalConfig cfg;
    cfg.classes = in.classes;
    cfg.distance_thresholds = {1.0};
    const DetectionReport base = evaluate_detection_bev(in.preds, in.gts, cfg);

    Instance with_fp = in;
    const std::size_t f = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(in.preds.size()) - 1));
    const Category c = in.classes[static_cast<std::size_t>(uniform_int(rng, 0, 2))];
    with_fp.preds[f].push_back(at(1000, 1000, c, uniform(rng, 0.0, 1.0)));
    const DetectionReport fp = evaluate_detection_bev(with_fp.preds, with_fp.gts, cfg);
    for (std::size_t k = 0; k < base.classes.size(); ++k) {
      EXPECT_LE(fp.classes[k].ap[0], base.classes[k].ap[0] + 1e-12) << trial;
    }

    // exact prediction for a GT nothing matched, ranked last
    Instance with_tp = in;
    bool added = false;
    for (std::size_t ff = 0; ff < in.gts.size() && !added; ++ff) {
      for (const Box3D& g : in.gts[ff]) {
        bool near = false;
        for (const Box3D& p : in.preds[ff]) near |= p.category == g.category && bev_center_distance(p, g) <= 1.0;
        if (near) continue;
        with_tp.preds[ff].push_back(at(g.center.x(), g.center.y(), g.category, 0.0));
        added = true;
        break;
      }
    }
    if (!added) continue;
    const DetectionReport tp = evaluate_detection_bev(with_tp.preds, with_tp.gts, cfg);
    for (std::size_t k = 0; k < base.classes.size(); ++k) {
      EXPECT_GE(tp.classes[k].ap[0], base.classes[k].ap[0] - 1e-12) << trial;
    }
  }
}

TEST(DetectionEval, RejectsBadInput) {
  DetectionEvalConfig cfg;
  cfg.distance_thresholds = {2.0, 1.0};
  EXPECT_THROW(validate(cfg), ConfigError);
  EXPECT_THROW(evaluate_detection_bev({{}}, {{}, {}}), Error);
  EXPECT_THROW(evaluate_detection_bev({{at(0, 0, Category::Car)}}, {{at(0, 0, Category::Car)}}), Error);  // no score
}

TEST(DetectionEval3D, DifficultyBuckets) {
  Box3D b = at(10, 0, Category::Car);
  EXPECT_EQ(difficulty_of(b), Difficulty::Easy);  // range only
  b.attributes["num_points"] = 60.0;
  EXPECT_EQ(difficulty_of(b), Difficulty::Easy);
  b.attributes["num_points"] = 50.0;
  EXPECT_EQ(difficulty_of(b), Difficulty::Moderate);
  b.attributes["num_points"] = 20.0;
  EXPECT_EQ(difficulty_of(b), Difficulty::Hard);
  b.attributes["num_points"] = 500.0;
  b.center.x() = 101;
  EXPECT_EQ(difficulty_of(b), Difficulty::Hard);
  b.center.x() = 70;
  EXPECT_EQ(difficulty_of(b), Difficulty::Moderate);
}

TEST(DetectionEval3D, PerfectPredictionsScoreOneInEveryBucket) {
  FrameBoxes gts(1), preds(1);
  for (int k = 0; k < 9; ++k) {
    Box3D g = at(k * 15.0, 3.0, Category::Car);
    g.dimensions = {4.5, 1.9, 1.6};
    g.attributes["num_points"] = k < 3 ? 200.0 : k < 6 ? 30.0 : 5.0;
    gts[0].push_back(g);
    Box3D p = g;
    p.score = 0.5;
    preds[0].push_back(p);
  }
  const DetectionReport3D r = evaluate_detection_3d(preds, gts);
  EXPECT_EQ(r.buckets.size(), 3u);
  EXPECT_NEAR(r.easy, 1.0, 1e-12);
  EXPECT_NEAR(r.moderate, 1.0, 1e-12);
  EXPECT_NEAR(r.hard, 1.0, 1e-12);
  EXPECT_NEAR(r.average, 1.0, 1e-12);
  // predictions of other buckets are ignored, not false positives
  EXPECT_EQ(to_json(r)["average"].get<double>(), r.average);
}

TEST(DetectionEval3D, SlightlyOffBoxDependsOnIouThreshold) {
  FrameBoxes gts(1), preds(1);
  Box3D g = at(0, 0, Category::Car);
  g.dimensions = {4, 2, 1.5};
  gts[0].push_back(g);
  Box3D p = g;
  p.center.x() = 1.0;  // IoU 3/5
  p.score = 0.9;
  preds[0].push_back(p);
  DetectionEvalConfig cfg;
  cfg.classes = {Category::Car};
  cfg.iou_thresholds = {0.5, 0.7};
  const DetectionReport3D r = evaluate_detection_3d(preds, gts, cfg);
  const auto& cr = r.buckets.at(Difficulty::Easy).classes.at(0);
  EXPECT_NEAR(cr.ap[0], 1.0, 1e-12);
  EXPECT_EQ(cr.ap[1], 0.0);
}


TEST(TrackingEval, MotaFixture) {
  const auto [pred, gt] = mota_fixture();
  const TrackingEvalReport r = evaluate_tracking(pred, gt);
  EXPECT_EQ(r.num_gt_boxes, 20u);
  EXPECT_EQ(r.fp, 2u);
  EXPECT_EQ(r.fn, 3u);
  EXPECT_EQ(r.ids, 1u);
  EXPECT_NEAR(r.mota, 0.7, 1e-12);
  EXPECT_EQ(r.gt, 2u);
  EXPECT_EQ(r.mt, 1u);  // g1 is covered 70%, below the 80% bar
  EXPECT_EQ(r.pt, 1u);
  EXPECT_EQ(r.ml, 0u);
}

TEST(TrackingEval, MotpFixture) {
  const auto [pred, gt] = motp_fixture();
  const TrackingEvalReport r = evaluate_tracking(pred, gt);
  EXPECT_EQ(r.matches, 4u);
  EXPECT_NEAR(r.motp, 0.25, 1e-12);
  EXPECT_NEAR(r.mota, 1.0, 1e-12);
  EXPECT_NEAR(r.idf1, 1.0, 1e-12);
}

TEST(TrackingEval, FragmentationAndStickyMatches) {
  FrameBoxes gt(6), pred(6);
  for (int f = 0; f < 6; ++f) {
    const auto u = static_cast<std::size_t>(f);
    gt[u] = {tracked(0, 0, "g")};
    if (f != 2) pred[u].push_back(tracked(f == 4 ? 1.5 : 0.0, 0, "p"));
    // a closer distractor must not steal the established match
    if (f == 4) pred[u].push_back(tracked(0.1, 0, "q"));
  }
  const TrackingEvalReport r = evaluate_tracking(pred, gt);
  EXPECT_EQ(r.fm, 1u);
  EXPECT_EQ(r.ids, 0u);
  EXPECT_EQ(r.fn, 1u);
  EXPECT_EQ(r.fp, 1u);
}

TEST(TrackingEval, PartitionAndMotaProperties) {
  Rng rng(64);
  for (int trial = 0; trial < 100; ++trial) {
    const TrackSet t = random_track_set(rng);
    const TrackingEvalReport r = evaluate_tracking(t.pred, t.gt);
    EXPECT_EQ(r.gt, t.gt_ids.size());
    EXPECT_EQ(r.mt + r.pt + r.ml, r.gt);
    EXPECT_LE(r.mota, 1.0);
    if (r.num_gt_boxes > 0) EXPECT_EQ(r.mota == 1.0, r.fp == 0 && r.fn == 0 && r.ids == 0) << trial;
    EXPECT_EQ(r.matches + r.fn, r.num_gt_boxes);
  }
}

TEST(TrackingEval, RequiresTrackIds) {
  EXPECT_THROW(evaluate_tracking({{at(0, 0, Category::Car)}}, {{tracked(0, 0, "g")}}), Error);
  EXPECT_THROW(evaluate_tracking({{}}, {{}}, 0.0), ConfigError);
}

TEST(Reports, JsonKeys) {
  TrackingEvalReport t;
  t.mota = 0.5;
  const auto j = to_json(t);
  for (const char* k : {"MOTA", "MOTP_m", "IDF1", "MT", "PT", "ML", "FP", "FN", "IDS", "FM"}) EXPECT_TRUE(j.contains(k)) << k;
  DetectionReport d;
  d.map = 0.25;
  EXPECT_EQ(to_json(d)["mAP"].get<double>(), 0.25);
  EXPECT_TRUE(to_json(DetectionEvalConfig{}).contains("distance_thresholds"));
}

#pragma once

// Detection metrics (center-distance AP following the nuScenes protocol and
// 3D-IoU AP with difficulty tiers) and CLEAR-MOT / identity tracking metrics.
// Inputs are frame-aligned: preds[i] and gts[i] describe the same frame.

#include <nlohmann/json.hpp>

#include <map>
#include <string>
#include <vector>

#include "v2x/geometry.hpp"

namespace v2x {

using FrameBoxes = std::vector<std::vector<Box3D>>;

enum class Difficulty { Easy, Moderate, Hard };

std::string_view to_string(Difficulty d);

/// easy: more than easy_min_points inside and range <= easy_max_range;
/// hard: at most hard_max_points or range > hard_min_range; moderate: rest.
/// Boxes without a num_points attribute are bucketed on range alone.
/// Range is the ground-plane distance of the box center from the origin.
struct DifficultyRule {
  double easy_min_points = 50;
  double easy_max_range = 50;
  double hard_max_points = 20;
  double hard_min_range = 100;
};

Difficulty difficulty_of(const Box3D& gt, const DifficultyRule& rule = {});

struct DetectionEvalConfig {
  std::vector<double> distance_thresholds{0.5, 1.0, 2.0, 4.0};
  std::vector<Category> classes{kTrafficCategories.begin(), kTrafficCategories.end()};
  double min_recall = 0.1;
  double min_precision = 0.1;
  std::vector<double> iou_thresholds{0.1, 0.25, 0.5};
  DifficultyRule difficulty;
};

void validate(const DetectionEvalConfig& config);

/// Precision sampled at recall 0, 0.01, ..., 1.
struct PrCurve {
  std::vector<double> recall;
  std::vector<double> precision;
};

struct ClassResult {
  Category category = Category::Other;
  std::size_t num_gt = 0;
  std::size_t num_pred = 0;
  std::vector<double> ap;  ///< one per threshold, in config order
  double mean_ap = 0.0;
};

struct DetectionReport {
  std::vector<double> thresholds;  ///< distances (m) or IoU values
  std::vector<ClassResult> classes;  ///< evaluated classes only
  std::vector<std::string> notices;  ///< skipped classes and similar
  double map = 0.0;  ///< mean over evaluated classes x thresholds; 0 when none
};

/// Interpolated precision/recall after greedy score-ordered matching.
/// `is_tp[i]` tells whether prediction i (in descending score order) is a
/// true positive. Precision beyond the largest achieved recall is 0.
PrCurve pr_curve(const std::vector<bool>& is_tp, std::size_t num_gt);

/// Mean of max(p - min_precision, 0) over recall bins above min_recall,
/// normalized by (1 - min_precision).
double average_precision(const PrCurve& curve, double min_recall = 0.1, double min_precision = 0.1);

DetectionReport evaluate_detection_bev(const FrameBoxes& preds, const FrameBoxes& gts,
                                       const DetectionEvalConfig& config = {});

struct DetectionReport3D {
  std::map<Difficulty, DetectionReport> buckets;  ///< only buckets holding GT
  double easy = 0.0;
  double moderate = 0.0;
  double hard = 0.0;
  double average = 0.0;  ///< mean over the buckets present
  std::vector<std::string> notices;
};

/// Matching by iou_3d >= threshold. In a bucket, predictions matched to GT of
/// another bucket are ignored rather than counted as false positives.
DetectionReport3D evaluate_detection_3d(const FrameBoxes& preds, const FrameBoxes& gts,
                                        const DetectionEvalConfig& config = {});

struct TrackingEvalReport {
  double mota = 0.0;
  double motp = 0.0;  ///< meters, mean ground-plane distance over matches
  double idf1 = 0.0;
  double idp = 0.0;
  double idr = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  std::size_t gt = 0;  ///< ground-truth trajectories
  std::size_t mt = 0;
  std::size_t pt = 0;
  std::size_t ml = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t ids = 0;
  std::size_t fm = 0;
  std::size_t num_gt_boxes = 0;
  std::size_t matches = 0;
};

/// Class-agnostic CLEAR-MOT evaluation. Every box needs a track id. Matches
/// from the previous frame are kept while within match_dist; the remaining
/// boxes are assigned optimally under the same gate.
TrackingEvalReport evaluate_tracking(const FrameBoxes& pred_tracks, const FrameBoxes& gt_tracks, double match_dist = 2.0);

nlohmann::json to_json(const DetectionReport& r);
nlohmann::json to_json(const DetectionReport3D& r);
nlohmann::json to_json(const TrackingEvalReport& r);
nlohmann::json to_json(const DetectionEvalConfig& c);

}  // namespace v2x

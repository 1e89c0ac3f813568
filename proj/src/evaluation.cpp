#include "v2x/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <unordered_map>

#include "v2x/assignment.hpp"

namespace v2x {

namespace {

struct PredRef {
  std::size_t frame;
  std::size_t index;
  double score;
};

/// Same-class predictions across all frames, descending score, ties by
/// (frame, index).
std::vector<PredRef> ranked(const FrameBoxes& preds, Category c) {
  std::vector<PredRef> out;
  for (std::size_t f = 0; f < preds.size(); ++f) {
    for (std::size_t i = 0; i < preds[f].size(); ++i) {
      const Box3D& b = preds[f][i];
      if (b.category != c) continue;
      if (!b.score) throw Error("prediction in frame " + std::to_string(f) + " has no score");
      out.push_back({f, i, *b.score});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const PredRef& a, const PredRef& b) { return a.score > b.score; });
  return out;
}

// numpy.interp(x, xp, fp, right=0) for non-decreasing xp
double np_interp(double x, const std::vector<double>& xp, const std::vector<double>& fp) {
  const std::size_t n = xp.size();
  if (n == 0) return 0.0;
  if (x > xp[n - 1]) return 0.0;
  if (x == xp[n - 1]) return fp[n - 1];
  if (x < xp[0]) return fp[0];
  const std::size_t j = static_cast<std::size_t>(std::upper_bound(xp.begin(), xp.end(), x) - xp.begin()) - 1;
  const double slope = (fp[j + 1] - fp[j]) / (xp[j + 1] - xp[j]);
  return slope * (x - xp[j]) + fp[j];
}

void check_aligned(const FrameBoxes& preds, const FrameBoxes& gts) {
  if (preds.size() != gts.size()) {
    throw Error("prediction and ground-truth frame counts differ (" + std::to_string(preds.size()) + " vs " +
                std::to_string(gts.size()) + ")");
  }
}

enum class Outcome { TruePositive, FalsePositive, Ignored };

/// Greedy matcher shared by both detection modes. `affinity` returns a value
/// where larger is better and nullopt when the pair may not match.
template <typename Affinity, typename Counts>
std::vector<Outcome> greedy_match(const FrameBoxes& preds, const FrameBoxes& gts, Category c,
                                  const std::vector<PredRef>& order, Affinity affinity, Counts counts) {
  std::vector<std::vector<bool>> taken(gts.size());
  for (std::size_t f = 0; f < gts.size(); ++f) taken[f].assign(gts[f].size(), false);
  std::vector<Outcome> out;
  out.reserve(order.size());
  for (const PredRef& p : order) {
    const Box3D& pb = preds[p.frame][p.index];
    std::size_t best = gts[p.frame].size();
    double best_a = -std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < gts[p.frame].size(); ++g) {
      const Box3D& gb = gts[p.frame][g];
      if (taken[p.frame][g] || gb.category != c) continue;
      const auto a = affinity(pb, gb);
      if (a && *a > best_a) {
        best_a = *a;
        best = g;
      }
    }
    if (best == gts[p.frame].size()) {
      out.push_back(Outcome::FalsePositive);
      continue;
    }
    taken[p.frame][best] = true;
    out.push_back(counts(gts[p.frame][best]) ? Outcome::TruePositive : Outcome::Ignored);
  }
  return out;
}

template <typename MatchFor, typename GtFilter>
DetectionReport evaluate(const FrameBoxes& preds, const FrameBoxes& gts, const DetectionEvalConfig& config,
                         const std::vector<double>& thresholds, MatchFor match_for, GtFilter keep_gt) {
  DetectionReport report;
  report.thresholds = thresholds;
  double sum = 0.0;
  std::size_t cells = 0;
  for (Category c : config.classes) {
    std::size_t num_gt = 0;
    for (const auto& frame : gts) {
      for (const Box3D& b : frame) num_gt += b.category == c && keep_gt(b);
    }
    const std::vector<PredRef> order = ranked(preds, c);
    if (num_gt == 0) {
      report.notices.push_back(std::string("class ") + std::string(to_string(c)) + " has no ground truth; skipped");
      continue;
    }
    ClassResult cr;
    cr.category = c;
    cr.num_gt = num_gt;
    cr.num_pred = order.size();
    for (double th : thresholds) {
      const std::vector<Outcome> outcome = match_for(c, order, th);
      std::vector<bool> is_tp;
      is_tp.reserve(outcome.size());
      for (Outcome o : outcome) {
        if (o != Outcome::Ignored) is_tp.push_back(o == Outcome::TruePositive);
      }
      const double ap = average_precision(pr_curve(is_tp, num_gt), config.min_recall, config.min_precision);
      cr.ap.push_back(ap);
      sum += ap;
      ++cells;
    }
    double m = 0.0;
    for (double a : cr.ap) m += a;
    cr.mean_ap = cr.ap.empty() ? 0.0 : m / static_cast<double>(cr.ap.size());
    report.classes.push_back(std::move(cr));
  }
  report.map = cells ? sum / static_cast<double>(cells) : 0.0;
  return report;
}

}  // namespace

std::string_view to_string(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return "easy";
    case Difficulty::Moderate: return "moderate";
    case Difficulty::Hard: return "hard";
  }
  return "moderate";
}

Difficulty difficulty_of(const Box3D& gt, const DifficultyRule& rule) {
  const double range = gt.center.head<2>().norm();
  const auto pts = numeric_attribute(gt, "num_points");
  if (!pts) {
    if (range > rule.hard_min_range) return Difficulty::Hard;
    if (range <= rule.easy_max_range) return Difficulty::Easy;
    return Difficulty::Moderate;
  }
  if (*pts > rule.easy_min_points && range <= rule.easy_max_range) return Difficulty::Easy;
  if (*pts <= rule.hard_max_points || range > rule.hard_min_range) return Difficulty::Hard;
  return Difficulty::Moderate;
}

void validate(const DetectionEvalConfig& config) {
  auto ascending_positive = [](const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!(v[i] > 0) || (i > 0 && !(v[i] > v[i - 1]))) return false;
    }
    return !v.empty();
  };
  if (!ascending_positive(config.distance_thresholds)) throw ConfigError("distance thresholds must be positive and ascending");
  if (!ascending_positive(config.iou_thresholds) || config.iou_thresholds.back() > 1) {
    throw ConfigError("IoU thresholds must be ascending in (0, 1]");
  }
  if (config.min_recall < 0 || config.min_recall >= 1 || config.min_precision < 0 || config.min_precision >= 1) {
    throw ConfigError("min_recall and min_precision must be in [0, 1)");
  }
  if (config.classes.empty()) throw ConfigError("no classes to evaluate");
}

PrCurve pr_curve(const std::vector<bool>& is_tp, std::size_t num_gt) {
  std::vector<double> rec, prec;
  rec.reserve(is_tp.size());
  prec.reserve(is_tp.size());
  double tp = 0, fp = 0;
  for (bool t : is_tp) {
    (t ? tp : fp) += 1;
    rec.push_back(num_gt ? tp / static_cast<double>(num_gt) : 0.0);
    prec.push_back(tp / (tp + fp));
  }
  PrCurve c;
  c.recall.resize(101);
  c.precision.resize(101);
  for (int i = 0; i <= 100; ++i) {
    c.recall[static_cast<std::size_t>(i)] = i / 100.0;
    c.precision[static_cast<std::size_t>(i)] = np_interp(i / 100.0, rec, prec);
  }
  return c;
}

double average_precision(const PrCurve& curve, double min_recall, double min_precision) {
  const auto first = static_cast<std::size_t>(std::lround(100 * min_recall)) + 1;
  if (first >= curve.precision.size()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = first; i < curve.precision.size(); ++i) sum += std::max(curve.precision[i] - min_precision, 0.0);
  return sum / static_cast<double>(curve.precision.size() - first) / (1.0 - min_precision);
}

DetectionReport evaluate_detection_bev(const FrameBoxes& preds, const FrameBoxes& gts, const DetectionEvalConfig& config) {
  validate(config);
  check_aligned(preds, gts);
  auto match_for = [&](Category c, const std::vector<PredRef>& order, double th) {
    return greedy_match(
        preds, gts, c, order,
        [th](const Box3D& p, const Box3D& g) -> std::optional<double> {
          const double d = bev_center_distance(p, g);
          if (d <= th) return -d;
          return std::nullopt;
        },
        [](const Box3D&) { return true; });
  };
  return evaluate(preds, gts, config, config.distance_thresholds, match_for, [](const Box3D&) { return true; });
}

DetectionReport3D evaluate_detection_3d(const FrameBoxes& preds, const FrameBoxes& gts, const DetectionEvalConfig& config) {
  validate(config);
  check_aligned(preds, gts);
  DetectionReport3D out;
  double sum = 0.0;
  int present = 0;
  for (Difficulty d : {Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard}) {
    auto in_bucket = [&](const Box3D& g) { return difficulty_of(g, config.difficulty) == d; };
    bool any = false;
    for (const auto& frame : gts) {
      for (const Box3D& g : frame) {
        if (std::find(config.classes.begin(), config.classes.end(), g.category) != config.classes.end() && in_bucket(g)) any = true;
      }
    }
    if (!any) {
      out.notices.push_back(std::string("no ground truth in the ") + std::string(to_string(d)) + " bucket");
      continue;
    }
    auto match_for = [&](Category c, const std::vector<PredRef>& order, double th) {
      return greedy_match(
          preds, gts, c, order,
          [th](const Box3D& p, const Box3D& g) -> std::optional<double> {
            const double iou = iou_3d(p, g);
            if (iou >= th && iou > 0) return iou;
            return std::nullopt;
          },
          in_bucket);
    };
    DetectionReport r = evaluate(preds, gts, config, config.iou_thresholds, match_for, in_bucket);
    const double m = r.map;
    out.buckets.emplace(d, std::move(r));
    (d == Difficulty::Easy ? out.easy : d == Difficulty::Moderate ? out.moderate : out.hard) = m;
    sum += m;
    ++present;
  }
  out.average = present ? sum / present : 0.0;
  return out;
}

TrackingEvalReport evaluate_tracking(const FrameBoxes& pred_tracks, const FrameBoxes& gt_tracks, double match_dist) {
  check_aligned(pred_tracks, gt_tracks);
  if (!(match_dist > 0)) throw ConfigError("match distance must be positive");
  auto id_of = [](const Box3D& b, const char* side, std::size_t frame) -> const std::string& {
    if (!b.track_id) throw Error(std::string(side) + " box in frame " + std::to_string(frame) + " has no track id");
    return *b.track_id;
  };

  TrackingEvalReport r;
  std::map<std::string, std::string> last_match;  // gt id -> pred id
  std::map<std::string, std::vector<bool>> gt_matched;  // per frame the gt is present
  std::map<std::pair<std::string, std::string>, std::size_t> pair_hits;
  std::map<std::string, std::size_t> gt_count, pred_count;
  double dist_sum = 0.0;

  for (std::size_t f = 0; f < gt_tracks.size(); ++f) {
    const auto& gts = gt_tracks[f];
    const auto& preds = pred_tracks[f];
    std::map<std::string, std::size_t> gt_index, pred_index;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      if (!gt_index.emplace(id_of(gts[i], "ground-truth", f), i).second) {
        throw Error("duplicate ground-truth track id '" + *gts[i].track_id + "' in frame " + std::to_string(f));
      }
    }
    for (std::size_t j = 0; j < preds.size(); ++j) {
      if (!pred_index.emplace(id_of(preds[j], "predicted", f), j).second) {
        throw Error("duplicate predicted track id '" + *preds[j].track_id + "' in frame " + std::to_string(f));
      }
    }
    r.num_gt_boxes += gts.size();

    Eigen::MatrixXd dist(static_cast<Eigen::Index>(gts.size()), static_cast<Eigen::Index>(preds.size()));
    for (std::size_t i = 0; i < gts.size(); ++i) {
      for (std::size_t j = 0; j < preds.size(); ++j) {
        dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = bev_center_distance(gts[i], preds[j]);
      }
    }
    // identity metrics: every gated co-occurrence counts
    for (std::size_t i = 0; i < gts.size(); ++i) {
      ++gt_count[*gts[i].track_id];
      for (std::size_t j = 0; j < preds.size(); ++j) {
        if (dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) <= match_dist) {
          ++pair_hits[{*gts[i].track_id, *preds[j].track_id}];
        }
      }
    }
    for (const Box3D& p : preds) ++pred_count[*p.track_id];

    std::vector<int> g2p(gts.size(), -1);
    std::vector<int> p2g(preds.size(), -1);
    for (const auto& [gid, pid] : last_match) {
      const auto gi = gt_index.find(gid);
      const auto pj = pred_index.find(pid);
      if (gi == gt_index.end() || pj == pred_index.end()) continue;
      if (dist(static_cast<Eigen::Index>(gi->second), static_cast<Eigen::Index>(pj->second)) <= match_dist) {
        g2p[gi->second] = static_cast<int>(pj->second);
        p2g[pj->second] = static_cast<int>(gi->second);
      }
    }
    std::vector<std::size_t> free_g, free_p;
    for (std::size_t i = 0; i < gts.size(); ++i) if (g2p[i] < 0) free_g.push_back(i);
    for (std::size_t j = 0; j < preds.size(); ++j) if (p2g[j] < 0) free_p.push_back(j);
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(free_g.size()), static_cast<Eigen::Index>(free_p.size()));
    for (std::size_t a = 0; a < free_g.size(); ++a) {
      for (std::size_t b = 0; b < free_p.size(); ++b) {
        sub(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
            dist(static_cast<Eigen::Index>(free_g[a]), static_cast<Eigen::Index>(free_p[b]));
      }
    }
    const Assignment as = solve_assignment(sub, match_dist);
    for (std::size_t a = 0; a < free_g.size(); ++a) {
      const int b = as.row_to_col[a];
      if (b < 0) continue;
      g2p[free_g[a]] = static_cast<int>(free_p[static_cast<std::size_t>(b)]);
      p2g[free_p[static_cast<std::size_t>(b)]] = static_cast<int>(free_g[a]);
    }

    for (std::size_t i = 0; i < gts.size(); ++i) {
      const std::string& gid = *gts[i].track_id;
      const bool matched = g2p[i] >= 0;
      gt_matched[gid].push_back(matched);
      if (!matched) {
        ++r.fn;
        continue;
      }
      const std::string& pid = *preds[static_cast<std::size_t>(g2p[i])].track_id;
      const auto it = last_match.find(gid);
      if (it != last_match.end() && it->second != pid) ++r.ids;
      last_match[gid] = pid;
      ++r.matches;
      dist_sum += dist(static_cast<Eigen::Index>(i), g2p[i]);
    }
    for (std::size_t j = 0; j < preds.size(); ++j) r.fp += p2g[j] < 0;
  }

  r.gt = gt_matched.size();
  for (const auto& [gid, seq] : gt_matched) {
    const auto hit = static_cast<double>(std::count(seq.begin(), seq.end(), true));
    const double coverage = hit / static_cast<double>(seq.size());
    if (coverage >= 0.8) ++r.mt;
    else if (coverage <= 0.2) ++r.ml;
    else ++r.pt;
    std::size_t runs = 0;
    for (std::size_t k = 0; k < seq.size(); ++k) runs += seq[k] && (k == 0 || !seq[k - 1]);
    if (runs > 1) r.fm += runs - 1;
  }

  // global identity matching maximizing co-occurrence hits
  std::vector<std::string> gids, pids;
  for (const auto& [id, n] : gt_count) gids.push_back(id);
  for (const auto& [id, n] : pred_count) pids.push_back(id);
  double max_hits = 0;
  for (const auto& [k, n] : pair_hits) max_hits = std::max(max_hits, static_cast<double>(n));
  Eigen::MatrixXd idc = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(gids.size()),
                                                  static_cast<Eigen::Index>(pids.size()), max_hits);
  for (std::size_t a = 0; a < gids.size(); ++a) {
    for (std::size_t b = 0; b < pids.size(); ++b) {
      const auto it = pair_hits.find({gids[a], pids[b]});
      if (it != pair_hits.end()) idc(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) -= static_cast<double>(it->second);
    }
  }
  const Assignment ida = solve_assignment(idc, max_hits);
  double idtp = 0;
  for (std::size_t a = 0; a < gids.size(); ++a) {
    const int b = ida.row_to_col[a];
    if (b < 0) continue;
    const auto it = pair_hits.find({gids[a], pids[static_cast<std::size_t>(b)]});
    if (it != pair_hits.end()) idtp += static_cast<double>(it->second);
  }
  double total_pred = 0;
  for (const auto& [id, n] : pred_count) total_pred += static_cast<double>(n);
  const double total_gt = static_cast<double>(r.num_gt_boxes);
  const double idfp = total_pred - idtp;
  const double idfn = total_gt - idtp;
  r.idp = idtp + idfp > 0 ? idtp / (idtp + idfp) : 0.0;
  r.idr = idtp + idfn > 0 ? idtp / (idtp + idfn) : 0.0;
  r.idf1 = 2 * idtp + idfp + idfn > 0 ? 2 * idtp / (2 * idtp + idfp + idfn) : 0.0;

  const auto m = static_cast<double>(r.matches);
  r.motp = r.matches ? dist_sum / m : 0.0;
  r.recall = total_gt > 0 ? m / total_gt : 0.0;
  r.precision = r.matches + r.fp > 0 ? m / (m + static_cast<double>(r.fp)) : 0.0;
  r.mota = total_gt > 0 ? 1.0 - static_cast<double>(r.fp + r.fn + r.ids) / total_gt : 0.0;
  return r;
}

nlohmann::json to_json(const DetectionEvalConfig& c) {
  nlohmann::json j;
  j["distance_thresholds"] = c.distance_thresholds;
  j["iou_thresholds"] = c.iou_thresholds;
  j["min_recall"] = c.min_recall;
  j["min_precision"] = c.min_precision;
  auto& cls = j["classes"] = nlohmann::json::array();
  for (Category k : c.classes) cls.push_back(std::string(to_string(k)));
  j["difficulty_rule"] = {{"easy", {{"min_points_exclusive", c.difficulty.easy_min_points}, {"max_range", c.difficulty.easy_max_range}}},
                          {"hard", {{"max_points", c.difficulty.hard_max_points}, {"min_range_exclusive", c.difficulty.hard_min_range}}},
                          {"range", "ground-plane distance of the box center from the frame origin"}};
  return j;
}

nlohmann::json to_json(const DetectionReport& r) {
  nlohmann::json j;
  j["thresholds"] = r.thresholds;
  j["mAP"] = r.map;
  j["notices"] = r.notices;
  auto& cls = j["classes"] = nlohmann::json::object();
  for (const ClassResult& c : r.classes) {
    cls[std::string(to_string(c.category))] = {{"num_gt", c.num_gt}, {"num_pred", c.num_pred}, {"ap", c.ap}, {"mean_ap", c.mean_ap}};
  }
  return j;
}

nlohmann::json to_json(const DetectionReport3D& r) {
  nlohmann::json j;
  j["easy"] = r.easy;
  j["moderate"] = r.moderate;
  j["hard"] = r.hard;
  j["average"] = r.average;
  j["notices"] = r.notices;
  auto& b = j["buckets"] = nlohmann::json::object();
  for (const auto& [d, rep] : r.buckets) b[std::string(to_string(d))] = to_json(rep);
  return j;
}

nlohmann::json to_json(const TrackingEvalReport& r) {
  return {{"MOTA", r.mota}, {"MOTP_m", r.motp}, {"IDF1", r.idf1}, {"IDP", r.idp}, {"IDR", r.idr},
          {"Recall", r.recall}, {"Precision", r.precision}, {"GT", r.gt}, {"MT", r.mt}, {"PT", r.pt},
          {"ML", r.ml}, {"FP", r.fp}, {"FN", r.fn}, {"IDS", r.ids}, {"FM", r.fm},
          {"num_gt_boxes", r.num_gt_boxes}, {"matches", r.matches}};
}

}  // namespace v2x

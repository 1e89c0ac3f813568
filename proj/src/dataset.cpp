#include "v2x/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace v2x {

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

namespace {

std::array<std::size_t, 3> target_sizes(std::size_t n, const std::array<double, 3>& ratios) {
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (int s = 0; s < 3; ++s) {
    const double exact = ratios[s] * static_cast<double>(n);
    sizes[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[s] = exact - static_cast<double>(sizes[s]);
    used += sizes[s];
  }
  while (used < n) {
    int best = 0;
    for (int s = 1; s < 3; ++s) {
      if (rem[s] > rem[best] + 1e-12) best = s;
    }
    ++sizes[best];
    rem[best] = -1;
    ++used;
  }
  return sizes;
}

struct State {
  std::vector<Category> classes;
  std::vector<std::vector<double>> unit_counts;  // unit -> class
  std::vector<double> global_p;
  std::array<std::vector<double>, 3> split_counts;
  std::array<double, 3> split_total{};

  double deviation(int s, std::size_t c) const {
    if (split_total[s] <= 0) return 0.0;
    return std::abs(split_counts[s][c] / split_total[s] - global_p[c]);
  }
  double divergence() const {
    double d = 0;
    for (int s = 0; s < 3; ++s) {
      for (std::size_t c = 0; c < classes.size(); ++c) d += deviation(s, c);
    }
    return d;
  }
  void move(std::size_t u, int from, int to) {
    for (std::size_t c = 0; c < classes.size(); ++c) {
      const double v = unit_counts[u][c];
      if (from >= 0) {
        split_counts[from][c] -= v;
        split_total[from] -= v;
      }
      if (to >= 0) {
        split_counts[to][c] += v;
        split_total[to] += v;
      }
    }
  }
};

}  // namespace

SplitAssignment stratified_split(const std::vector<SplitUnit>& units, const SplitParams& params) {
  const double sum = params.ratios[0] + params.ratios[1] + params.ratios[2];
  if (std::abs(sum - 1.0) > 1e-6 || *std::min_element(params.ratios.begin(), params.ratios.end()) < 0) {
    throw ConfigError("split ratios must be non-negative and sum to 1");
  }
  if (!(params.tolerance >= 0)) throw ConfigError("split tolerance must be non-negative");

  SplitAssignment out;
  const std::size_t n = units.size();
  if (n == 0) return out;

  State st;
  std::map<Category, std::size_t> totals;
  for (const SplitUnit& u : units) {
    for (const auto& [c, k] : u.counts) totals[c] += k;
  }
  for (const auto& [c, k] : totals) {
    if (k > 0) st.classes.push_back(c);
  }
  double grand = 0;
  for (Category c : st.classes) grand += static_cast<double>(totals[c]);
  for (Category c : st.classes) st.global_p.push_back(static_cast<double>(totals[c]) / grand);
  st.unit_counts.resize(n);
  for (std::size_t u = 0; u < n; ++u) {
    for (Category c : st.classes) {
      const auto it = units[u].counts.find(c);
      st.unit_counts[u].push_back(it == units[u].counts.end() ? 0.0 : static_cast<double>(it->second));
    }
  }
  for (auto& v : st.split_counts) v.assign(st.classes.size(), 0.0);

  std::vector<int> where(n, -1);
  if (n == 1) {
    where[0] = 0;
    st.move(0, -1, 0);
    out.notices.push_back("single unit assigned to train; val and test are empty");
    out.within_tolerance = false;
  } else {
    const auto cap = target_sizes(n, params.ratios);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(params.seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> rarity(n, 0.0);
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t c = 0; c < st.classes.size(); ++c) {
        rarity[u] += st.unit_counts[u][c] / static_cast<double>(totals[st.classes[c]]);
      }
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rarity[a] > rarity[b]; });

    std::array<std::size_t, 3> filled{};
    std::vector<std::vector<double>> target(3);
    for (int s = 0; s < 3; ++s) {
      for (std::size_t c = 0; c < st.classes.size(); ++c) {
        target[s].push_back(static_cast<double>(totals[st.classes[c]]) * static_cast<double>(cap[s]) / static_cast<double>(n));
      }
    }
    for (std::size_t u : order) {
      int best = -1;
      double best_cost = 0;
      double best_room = 0;
      for (int s = 0; s < 3; ++s) {
        if (filled[s] >= cap[s]) continue;
        double cost = 0;
        for (std::size_t c = 0; c < st.classes.size(); ++c) {
          const double have = st.split_counts[s][c];
          cost += std::abs(have + st.unit_counts[u][c] - target[s][c]) - std::abs(have - target[s][c]);
        }
        const double room = static_cast<double>(cap[s] - filled[s]) / static_cast<double>(cap[s]);
        if (best < 0 || cost < best_cost - 1e-12 || (std::abs(cost - best_cost) <= 1e-12 && room > best_room)) {
          best = s;
          best_cost = cost;
          best_room = room;
        }
      }
      where[u] = best;
      ++filled[best];
      st.move(u, -1, best);
    }

    // swap refinement; bounded so very large inputs stay tractable
    double current = st.divergence();
    const std::size_t max_pairs = 4'000'000;
    for (int pass = 0; pass < 20; ++pass) {
      bool improved = false;
      std::size_t tried = 0;
      for (std::size_t a = 0; a < n && tried < max_pairs; ++a) {
        for (std::size_t b = a + 1; b < n && tried < max_pairs; ++b) {
          if (where[a] == where[b]) continue;
          ++tried;
          const int sa = where[a];
          const int sb = where[b];
          st.move(a, sa, sb);
          st.move(b, sb, sa);
          const double d = st.divergence();
          if (d < current - 1e-12) {
            current = d;
            std::swap(where[a], where[b]);
            improved = true;
          } else {
            st.move(a, sb, sa);
            st.move(b, sa, sb);
          }
        }
      }
      if (!improved) break;
    }
  }

  for (std::size_t u = 0; u < n; ++u) {
    const int s = where[u];
    out.assignment[units[u].id] = static_cast<Split>(s);
    ++out.sizes[static_cast<std::size_t>(s)];
  }
  for (int s = 0; s < 3; ++s) out.achieved_ratios[s] = static_cast<double>(out.sizes[s]) / static_cast<double>(n);
  for (std::size_t c = 0; c < st.classes.size(); ++c) {
    auto& h = out.histograms[st.classes[c]];
    for (int s = 0; s < 3; ++s) {
      h[s] = static_cast<std::size_t>(std::llround(st.split_counts[s][c]));
      out.max_deviation = std::max(out.max_deviation, st.deviation(s, c));
    }
  }
  out.divergence = st.divergence();
  if (out.max_deviation > params.tolerance + 1e-12) {
    out.within_tolerance = false;
    std::ostringstream msg;
    msg << "class proportions deviate by up to " << out.max_deviation << " (tolerance " << params.tolerance << ")";
    out.notices.push_back(msg.str());
  }
  return out;
}

SplitAssignment stratified_split(const Sequence& seq, const SplitParams& params) {
  std::vector<SplitUnit> units;
  for (const Frame& f : seq.frames) {
    SplitUnit u{std::to_string(f.index), {}};
    for (const Box3D& b : f.labels) ++u.counts[b.category];
    units.push_back(std::move(u));
  }
  return stratified_split(units, params);
}

SplitAssignment stratified_split(const std::vector<Sequence>& sequences, const SplitParams& params) {
  std::vector<SplitUnit> units;
  for (const Sequence& s : sequences) {
    SplitUnit u{s.id, {}};
    for (const Frame& f : s.frames) {
      for (const Box3D& b : f.labels) ++u.counts[b.category];
    }
    units.push_back(std::move(u));
  }
  return stratified_split(units, params);
}

DatasetStats compute_stats(const Sequence& seq) {
  DatasetStats s;
  s.frames = seq.frames.size();
  double points_sum = 0;
  std::size_t points_n = 0;
  struct TrackPath {
    Category category;
    std::vector<std::pair<std::int64_t, Eigen::Vector3d>> centers;
  };
  std::map<std::string, TrackPath> tracks;
  for (const Frame& f : seq.frames) {
    ++s.objects_per_frame[f.labels.size()];
    for (const Box3D& b : f.labels) {
      ++s.boxes;
      ++s.class_counts[b.category];
      if (const auto pts = numeric_attribute(b, "num_points")) {
        std::size_t k = 0;
        while (k + 1 < kPointBucketEdges.size() && *pts >= kPointBucketEdges[k + 1]) ++k;
        ++s.points_histogram[k];
        points_sum += *pts;
        ++points_n;
      } else {
        ++s.boxes_without_points;
      }
      const double yaw = normalize_angle(b.yaw);
      const auto sector = std::min<std::size_t>(11, static_cast<std::size_t>(std::floor((yaw + kPi) / (kPi / 6))));
      ++s.yaw_rose[sector];
      ++s.distance_buckets[static_cast<int>(std::floor(b.center.head<2>().norm() / 20.0))];
      if (b.track_id) {
        auto [it, fresh] = tracks.try_emplace(*b.track_id, TrackPath{b.category, {}});
        it->second.centers.emplace_back(f.index, b.center);
      }
    }
  }
  s.mean_points_in_box = points_n ? points_sum / static_cast<double>(points_n) : 0.0;
  s.mean_objects_per_frame = s.frames ? static_cast<double>(s.boxes) / static_cast<double>(s.frames) : 0.0;
  for (auto& [id, path] : tracks) {
    std::stable_sort(path.centers.begin(), path.centers.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    double len = 0;
    for (std::size_t k = 1; k < path.centers.size(); ++k) len += (path.centers[k].second - path.centers[k - 1].second).norm();
    TrackLength& t = s.track_lengths[path.category];
    t.average += len;
    t.max = std::max(t.max, len);
    ++t.tracks;
  }
  for (auto& [c, t] : s.track_lengths) t.average /= static_cast<double>(t.tracks);
  return s;
}

nlohmann::json to_json(const DatasetStats& s) {
  using nlohmann::json;
  json j;
  j["frames"] = s.frames;
  j["boxes"] = s.boxes;
  json cls = json::object();
  for (const auto& [c, k] : s.class_counts) cls[std::string(to_string(c))] = k;
  j["class_counts"] = cls;
  json hist = json::array();
  for (std::size_t k = 0; k < s.points_histogram.size(); ++k) {
    json lo = kPointBucketEdges[k];
    json hi = k + 1 < kPointBucketEdges.size() ? json(kPointBucketEdges[k + 1]) : json(nullptr);
    hist.push_back({{"min", lo}, {"max_exclusive", hi}, {"boxes", s.points_histogram[k]}});
  }
  j["points_in_box"] = {{"histogram", hist}, {"mean", s.mean_points_in_box}, {"boxes_without_points", s.boxes_without_points}};
  json opf = json::object();
  for (const auto& [k, v] : s.objects_per_frame) opf[std::to_string(k)] = v;
  j["objects_per_frame"] = {{"histogram", opf}, {"mean", s.mean_objects_per_frame}};
  json tl = json::object();
  for (const auto& [c, t] : s.track_lengths) tl[std::string(to_string(c))] = {{"average_m", t.average}, {"max_m", t.max}, {"tracks", t.tracks}};
  j["track_lengths"] = tl;
  j["yaw_rose"] = {{"sector_deg", 30}, {"start_deg", -180}, {"counts", s.yaw_rose}};
  json db = json::object();
  for (const auto& [k, v] : s.distance_buckets) db[std::to_string(k * 20) + "-" + std::to_string(k * 20 + 20)] = v;
  j["distance_buckets_m"] = db;
  return j;
}

std::string stats_csv(const DatasetStats& s) {
  std::ostringstream out;
  out << "section,key,value\n";
  out << "summary,frames," << s.frames << "\nsummary,boxes," << s.boxes << "\n";
  for (const auto& [c, k] : s.class_counts) out << "class_counts," << to_string(c) << ',' << k << '\n';
  for (std::size_t k = 0; k < s.points_histogram.size(); ++k) {
    out << "points_in_box," << kPointBucketEdges[k];
    if (k + 1 < kPointBucketEdges.size()) out << '-' << kPointBucketEdges[k + 1];
    else out << '+';
    out << ',' << s.points_histogram[k] << '\n';
  }
  for (const auto& [k, v] : s.objects_per_frame) out << "objects_per_frame," << k << ',' << v << '\n';
  for (const auto& [c, t] : s.track_lengths) {
    out << "track_length_avg_m," << to_string(c) << ',' << t.average << '\n';
    out << "track_length_max_m," << to_string(c) << ',' << t.max << '\n';
  }
  for (std::size_t k = 0; k < s.yaw_rose.size(); ++k) out << "yaw_rose," << (-180 + 30 * static_cast<int>(k)) << ',' << s.yaw_rose[k] << '\n';
  for (const auto& [k, v] : s.distance_buckets) out << "distance_m," << k * 20 << ',' << v << '\n';
  return out.str();
}

nlohmann::json to_json(const SplitAssignment& s) {
  using nlohmann::json;
  json j;
  json a = json::object();
  for (const auto& [id, sp] : s.assignment) a[id] = std::string(to_string(sp));
  j["assignment"] = a;
  j["sizes"] = {{"train", s.sizes[0]}, {"val", s.sizes[1]}, {"test", s.sizes[2]}};
  j["achieved_ratios"] = s.achieved_ratios;
  json h = json::object();
  for (const auto& [c, v] : s.histograms) h[std::string(to_string(c))] = {{"train", v[0]}, {"val", v[1]}, {"test", v[2]}};
  j["class_histograms"] = h;
  j["divergence"] = s.divergence;
  j["max_deviation"] = s.max_deviation;
  j["within_tolerance"] = s.within_tolerance;
  j["notices"] = s.notices;
  return j;
}

}  // namespace v2x

#pragma once

// Stratified train/val/test splitting and label statistics.

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "v2x/openlabel.hpp"

namespace v2x {

enum class Split { Train = 0, Val = 1, Test = 2 };

std::string_view to_string(Split s);

struct SplitParams {
  std::array<double, 3> ratios{0.8, 0.1, 0.1};
  double tolerance = 0.02;  ///< max |class proportion in split - global proportion|
  std::uint64_t seed = 0;
};

struct SplitAssignment {
  std::map<std::string, Split> assignment;  ///< unit id -> split
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> achieved_ratios{};
  std::map<Category, std::array<std::size_t, 3>> histograms;  ///< objects per class per split
  double divergence = 0.0;      ///< sum over splits and classes of |p_split - p_global|
  double max_deviation = 0.0;   ///< largest single |p_split - p_global|
  bool within_tolerance = true;
  std::vector<std::string> notices;
};

/// A unit of assignment: a frame or a whole sequence, with its class counts.
struct SplitUnit {
  std::string id;
  std::map<Category, std::size_t> counts;
};

/// Split sizes follow the ratios with largest-remainder rounding. Units are
/// placed greedily (seeded order, rarest content first) into the split whose
/// per-class deficit shrinks most, then pairwise swaps between splits are
/// applied while they reduce the divergence.
SplitAssignment stratified_split(const std::vector<SplitUnit>& units, const SplitParams& params = {});

/// Frame-level split; unit ids are the frame indices.
SplitAssignment stratified_split(const Sequence& seq, const SplitParams& params = {});

/// Sequence-level split (no temporal leakage); unit ids are sequence ids.
SplitAssignment stratified_split(const std::vector<Sequence>& sequences, const SplitParams& params = {});

/// Histogram of points-in-box: [0,1), [1,50), [50,100), [100,200), [200,500),
/// [500,1000), [1000,5000), [5000, inf).
inline constexpr std::array<double, 8> kPointBucketEdges{0, 1, 50, 100, 200, 500, 1000, 5000};

struct TrackLength {
  double average = 0.0;  ///< meters
  double max = 0.0;
  std::size_t tracks = 0;
};

struct DatasetStats {
  std::size_t frames = 0;
  std::size_t boxes = 0;
  std::map<Category, std::size_t> class_counts;
  std::array<std::size_t, 8> points_histogram{};
  std::size_t boxes_without_points = 0;  ///< no num_points attribute
  double mean_points_in_box = 0.0;
  std::map<std::size_t, std::size_t> objects_per_frame;  ///< objects -> frames
  double mean_objects_per_frame = 0.0;
  std::map<Category, TrackLength> track_lengths;  ///< polyline of centers per track id
  std::array<std::size_t, 12> yaw_rose{};  ///< 30 degree sectors from -180
  std::map<int, std::size_t> distance_buckets;  ///< floor(range / 20 m) -> boxes
};

DatasetStats compute_stats(const Sequence& seq);

nlohmann::json to_json(const DatasetStats& s);
std::string stats_csv(const DatasetStats& s);
nlohmann::json to_json(const SplitAssignment& s);

}  // namespace v2x

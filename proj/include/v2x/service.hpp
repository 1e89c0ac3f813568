#pragma once

// Backend of the web annotator. `AnnotationStore` holds the sequences and
// their label revisions and implements every endpoint without HTTP;
// `AnnotationServer` maps it onto /v1 routes.
//
// Data directory layout: every sub-directory holding a sequence.json is a
// sequence, its id is the directory name. Label revisions are appended as
// <seq>/revisions/NNNNNN.json (full OpenLABEL documents) and
// <seq>/revisions/LATEST names the newest one.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "v2x/errors.hpp"
#include "v2x/geometry.hpp"
#include "v2x/openlabel.hpp"

namespace v2x {

/// Carries the HTTP status an endpoint should answer with.
class ServiceError : public Error {
 public:
  ServiceError(int status, const std::string& what, nlohmann::json body = nullptr)
      : Error(what), status_(status), body_(std::move(body)) {}

  int status() const { return status_; }
  const nlohmann::json& body() const { return body_; }

 private:
  int status_;
  nlohmann::json body_;
};

// ---------------------------------------------------------------------------
// Point-cloud chunks on the wire

inline constexpr char kChunkMagic[4] = {'V', '2', 'X', 'C'};
inline constexpr std::uint16_t kChunkVersion = 1;
inline constexpr std::size_t kChunkHeaderBytes = 16;

/// Indices kept at level of detail `lod` in (0, 1]: point i survives when
/// floor((i + 1) lod) > floor(i lod), so floor(n lod) points remain, spread
/// evenly over the input order.
std::vector<Eigen::Index> lod_indices(Eigen::Index n, double lod);

/// Header (16 bytes, little-endian): magic "V2XC", u16 version, u16 fields
/// per point (3 or 4), u32 points in this chunk, u32 chunk index. Then
/// float32 x, y, z[, intensity] per point.
std::string encode_chunk(const PointCloud& cloud, Eigen::Index begin, Eigen::Index end, std::uint32_t chunk_index);

struct DecodedChunk {
  PointCloud cloud;
  std::uint32_t chunk_index = 0;
};

DecodedChunk decode_chunk(std::string_view bytes);

// ---------------------------------------------------------------------------
// Stateless geometry helpers

struct InterpolationRequest {
  std::string track_id;
  std::int64_t start_frame = 0;
  Box3D start_box;
  std::int64_t end_frame = 0;
  Box3D end_box;
  std::optional<std::int64_t> from;  ///< defaults to start_frame
  std::optional<std::int64_t> to;    ///< defaults to end_frame
};

/// One box per frame in [from, to]. Centers interpolate linearly, yaw by
/// slerp of yaw-only quaternions, dimensions come from the end keyframe.
/// Keyframe indices return the keyframes unchanged.
std::vector<std::pair<std::int64_t, Box3D>> interpolate_track(const InterpolationRequest& request);

/// Region grown from the point nearest to `seed` (which must lie within
/// `radius`), linking points closer than `radius`; then fit_oriented_box.
/// Points with z below `min_z` are ignored (ground removal).
Box3D autofit_box(const PointCloud& cloud, const Eigen::Vector3d& seed, double radius,
                  std::optional<double> min_z = std::nullopt, std::size_t* region_size = nullptr);

struct BoxProjection {
  std::array<Projection, 8> corners;
  /// Edges with both corners in front of the camera, as pixel segments.
  std::vector<std::array<Eigen::Vector2d, 2>> segments;
  std::vector<std::array<int, 2>> segment_edges;
  bool behind = false;  ///< no corner in front
};

/// box_corners -> camera frame via the calibration extrinsics -> project_points.
BoxProjection project_box(const Box3D& box, const CameraCalibration& calib);

// ---------------------------------------------------------------------------
// Store

struct ServiceOptions {
  std::filesystem::path data_dir;
  Eigen::Index chunk_points = 65536;
};

struct RevisionInfo {
  std::int64_t number = 0;
  std::string author;
  std::int64_t timestamp_us = 0;
  std::optional<std::int64_t> frame;  ///< edited frame, when a single one
};

class AnnotationStore {
 public:
  explicit AnnotationStore(ServiceOptions options);
  ~AnnotationStore();

  AnnotationStore(const AnnotationStore&) = delete;
  AnnotationStore& operator=(const AnnotationStore&) = delete;

  const ServiceOptions& options() const { return options_; }

  nlohmann::json list_sequences() const;
  nlohmann::json sequence_info(const std::string& id) const;
  /// Labels at the latest revision, calibrations, image URLs and cloud chunk
  /// descriptors for `lod`.
  nlohmann::json frame_payload(const std::string& id, std::int64_t frame, double lod = 1.0) const;
  /// One binary chunk (see encode_chunk) of a stream's cloud at `lod`.
  std::string cloud_chunk(const std::string& id, std::int64_t frame, const std::string& stream, double lod,
                          std::uint32_t chunk) const;

  /// Replaces the labels of one frame. 409 when `base_revision` is not the
  /// latest, with the latest labels of that frame in the error body.
  RevisionInfo put_labels(const std::string& id, std::int64_t frame, std::int64_t base_revision,
                          const std::vector<Box3D>& labels, const std::string& author);

  /// Copies boxes with the given track ids into frame + 1 (replacing boxes of
  /// the same track there). An empty list copies every tracked box.
  RevisionInfo copy_next(const std::string& id, std::int64_t frame, const std::vector<std::string>& track_ids,
                         std::optional<std::int64_t> base_revision, const std::string& author);

  Box3D autofit(const std::string& id, std::int64_t frame, const Eigen::Vector3d& seed, double radius,
                std::optional<std::string> stream, std::optional<double> min_z) const;

  BoxProjection project(const std::string& id, std::int64_t frame, const std::string& camera,
                        const std::string& track_id) const;

  std::vector<RevisionInfo> revisions(const std::string& id) const;
  /// Full OpenLABEL document of revision `n` (0 is the sequence as loaded).
  std::string revision_document(const std::string& id, std::int64_t n) const;

  std::int64_t latest_revision(const std::string& id) const;
  Sequence snapshot(const std::string& id) const;
  std::filesystem::path sequence_dir(const std::string& id) const;

 private:
  struct Entry;

  Entry& entry(const std::string& id) const;
  PointCloud load_cloud(const Entry& e, const Frame& f, const std::string& stream) const;
  RevisionInfo commit(Entry& e, Sequence next, const std::string& author, std::optional<std::int64_t> frame);

  ServiceOptions options_;
  std::map<std::string, std::unique_ptr<Entry>> sequences_;
};

class AnnotationServer {
 public:
  explicit AnnotationServer(ServiceOptions options);
  ~AnnotationServer();

  AnnotationStore& store();

  /// Binds and serves on a background thread; returns the bound port (a free
  /// one when `port` is 0).
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace v2x

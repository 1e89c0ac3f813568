#pragma once

// ASAM OpenLABEL label documents and the in-memory Sequence model.
// The exact JSON layout is documented in docs/formats.md.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "v2x/errors.hpp"
#include "v2x/geometry.hpp"

namespace v2x {

enum class SensorKind { Lidar, Camera, Other };

std::string_view to_string(SensorKind kind);
SensorKind sensor_kind_from_string(std::string_view name);

struct StreamDescriptor {
  SensorKind kind = SensorKind::Other;
  std::string description;
  std::optional<CameraCalibration> camera;
  std::optional<Pose> pose;  ///< sensor placement; camera streams keep extrinsics in `camera`
  nlohmann::json extra = nlohmann::json::object();  ///< unknown stream keys, kept verbatim
};

struct Frame {
  std::int64_t index = 0;
  std::map<std::string, std::int64_t> timestamps_us;  ///< per stream
  std::map<std::string, std::string> uris;            ///< point cloud / image file per stream
  std::vector<Box3D> labels;
  std::map<std::string, Pose> transforms;  ///< named per-frame transforms (e.g. vehicle -> infra)
  nlohmann::json extra = nlohmann::json::object();
};

struct Sequence {
  std::string id;
  std::map<std::string, StreamDescriptor> streams;
  std::vector<Frame> frames;  ///< ordered by index
  std::map<std::string, std::string> tags;  ///< weather, time_of_day, ...
  nlohmann::json metadata_extra = nlohmann::json::object();
  nlohmann::json extra = nlohmann::json::object();  ///< unknown top-level OpenLABEL keys
};

/// Attribute keys the toolkit documents for boxes. Others load with a warning.
inline constexpr std::string_view kDocumentedAttributes[] = {
    "num_points", "occlusion", "orientation", "weather", "time_of_day"};

/// Object keys with this prefix hold boxes without a track id.
inline constexpr std::string_view kUntrackedPrefix = "_untracked_";

Sequence parse_openlabel(std::string_view document, Diagnostics* diag = nullptr);
Sequence parse_openlabel_json(const nlohmann::json& document, Diagnostics* diag = nullptr);

nlohmann::json openlabel_json(const Sequence& seq);
std::string write_openlabel(const Sequence& seq, int indent = 2);

Sequence load_openlabel(const std::string& path, Diagnostics* diag = nullptr);
void save_openlabel(const std::string& path, const Sequence& seq);

/// Checks Sequence invariants (strictly increasing per-stream timestamps,
/// box frames declared as streams, valid boxes). Throws ParseError with a
/// JSON pointer into the equivalent document.
void validate(const Sequence& seq);

/// Field-for-field comparison with `tolerance` on floating values. On
/// mismatch, `why` receives a short description.
bool approx_equal(const Sequence& a, const Sequence& b, double tolerance = 1e-9,
                  std::string* why = nullptr);

/// Box <-> cuboid value [cx, cy, cz, qx, qy, qz, qw, l, w, h].
std::array<double, 10> cuboid_values(const Box3D& box);

/// Box JSON as used on the service wire and inside reports.
nlohmann::json box_to_json(const Box3D& box);
Box3D box_from_json(const nlohmann::json& j, Diagnostics* diag = nullptr);

nlohmann::json pose_to_json(const Pose& pose);
Pose pose_from_json(const nlohmann::json& j);

/// Frame index lookup; nullptr when absent.
const Frame* find_frame(const Sequence& seq, std::int64_t index);
Frame* find_frame(Sequence& seq, std::int64_t index);

}  // namespace v2x

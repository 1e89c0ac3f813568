#include "v2x/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "v2x/pcd.hpp"
#include "v2x/spatial_index.hpp"

namespace v2x {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
void put_le(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.append(bytes, sizeof(T));
}

template <typename T>
T get_le(std::string_view in, std::size_t offset) {
  T value;
  std::memcpy(&value, in.data() + offset, sizeof(T));
  return value;
}

std::int64_t now_us() {
  return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file_atomic(const fs::path& p, const std::string& content) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    if (!out) throw Error("short write on " + tmp.string());
  }
  fs::rename(tmp, p);
}

std::string revision_name(std::int64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06lld.json", static_cast<long long>(n));
  return buf;
}

json revision_json(const RevisionInfo& r) {
  json j{{"revision", r.number}, {"author", r.author}, {"timestamp_us", r.timestamp_us}};
  j["frame"] = r.frame ? json(*r.frame) : json(nullptr);
  return j;
}

RevisionInfo revision_from_json(const json& j) {
  RevisionInfo r;
  r.number = j.at("revision").get<std::int64_t>();
  r.author = j.value("author", "");
  r.timestamp_us = j.value("timestamp_us", std::int64_t{0});
  if (j.contains("frame") && !j["frame"].is_null()) r.frame = j["frame"].get<std::int64_t>();
  return r;
}

json labels_json(const std::vector<Box3D>& labels) {
  json out = json::array();
  for (const Box3D& b : labels) out.push_back(box_to_json(b));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Chunks

std::vector<Eigen::Index> lod_indices(Eigen::Index n, double lod) {
  if (!(lod > 0.0) || lod > 1.0) throw ServiceError(400, "lod must be in (0, 1]");
  std::vector<Eigen::Index> out;
  out.reserve(static_cast<std::size_t>(std::floor(static_cast<double>(n) * lod)) + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::floor(static_cast<double>(i + 1) * lod) > std::floor(static_cast<double>(i) * lod)) out.push_back(i);
  }
  return out;
}

std::string encode_chunk(const PointCloud& cloud, Eigen::Index begin, Eigen::Index end, std::uint32_t chunk_index) {
  if (begin < 0 || end < begin || end > cloud.size()) throw Error("chunk range out of bounds");
  const bool with_i = cloud.has_intensity();
  const std::uint16_t fields = with_i ? 4 : 3;
  std::string out;
  out.reserve(kChunkHeaderBytes + static_cast<std::size_t>(end - begin) * fields * 4);
  out.append(kChunkMagic, 4);
  put_le<std::uint16_t>(out, kChunkVersion);
  put_le<std::uint16_t>(out, fields);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(end - begin));
  put_le<std::uint32_t>(out, chunk_index);
  for (Eigen::Index i = begin; i < end; ++i) {
    for (int k = 0; k < 3; ++k) put_le<float>(out, static_cast<float>(cloud.points(k, i)));
    if (with_i) put_le<float>(out, static_cast<float>(cloud.intensity(i)));
  }
  return out;
}

DecodedChunk decode_chunk(std::string_view bytes) {
  if (bytes.size() < kChunkHeaderBytes || std::memcmp(bytes.data(), kChunkMagic, 4) != 0) {
    throw Error("not a point chunk");
  }
  if (get_le<std::uint16_t>(bytes, 4) != kChunkVersion) throw Error("unsupported chunk version");
  const std::uint16_t fields = get_le<std::uint16_t>(bytes, 6);
  if (fields != 3 && fields != 4) throw Error("chunk field count must be 3 or 4");
  const std::uint32_t count = get_le<std::uint32_t>(bytes, 8);
  if (bytes.size() != kChunkHeaderBytes + static_cast<std::size_t>(count) * fields * 4) {
    throw Error("chunk size does not match its header");
  }
  DecodedChunk out;
  out.chunk_index = get_le<std::uint32_t>(bytes, 12);
  out.cloud.points.resize(3, count);
  if (fields == 4) out.cloud.intensity.resize(count);
  std::size_t at = kChunkHeaderBytes;
  for (std::uint32_t i = 0; i < count; ++i) {
    for (int k = 0; k < 3; ++k, at += 4) out.cloud.points(k, i) = get_le<float>(bytes, at);
    if (fields == 4) {
      out.cloud.intensity(i) = get_le<float>(bytes, at);
      at += 4;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Geometry helpers

std::vector<std::pair<std::int64_t, Box3D>> interpolate_track(const InterpolationRequest& r) {
  if (r.start_frame >= r.end_frame) throw ServiceError(422, "start frame must precede end frame");
  const std::int64_t from = r.from.value_or(r.start_frame);
  const std::int64_t to = r.to.value_or(r.end_frame);
  if (from > to || from < r.start_frame || to > r.end_frame) {
    throw ServiceError(422, "target range must lie between the keyframes");
  }
  for (const Box3D* b : {&r.start_box, &r.end_box}) {
    if (b->track_id && *b->track_id != r.track_id) throw ServiceError(422, "keyframes belong to another track");
    try {
      validate(*b);
    } catch (const InvalidBox& e) {
      throw ServiceError(422, e.what());
    }
  }
  const Quaternion<double> q0 = yaw_quaternion(r.start_box.yaw);
  const Quaternion<double> q1 = yaw_quaternion(r.end_box.yaw);
  std::vector<std::pair<std::int64_t, Box3D>> out;
  for (std::int64_t f = from; f <= to; ++f) {
    Box3D b;
    if (f == r.start_frame) {
      b = r.start_box;
    } else if (f == r.end_frame) {
      b = r.end_box;
    } else {
      const double t = static_cast<double>(f - r.start_frame) / static_cast<double>(r.end_frame - r.start_frame);
      b = r.end_box;
      b.center = r.start_box.center + t * (r.end_box.center - r.start_box.center);
      b.yaw = yaw_of(slerp(q0, q1, t));
      b.score.reset();
    }
    b.track_id = r.track_id;
    out.emplace_back(f, std::move(b));
  }
  return out;
}

Box3D autofit_box(const PointCloud& cloud, const Eigen::Vector3d& seed, double radius, std::optional<double> min_z,
                  std::size_t* region_size) {
  if (!(radius > 0)) throw ServiceError(422, "radius must be positive");
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    if (!min_z || cloud.points(2, i) >= *min_z) keep.push_back(i);
  }
  Eigen::Matrix3Xd pts(3, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) pts.col(static_cast<Eigen::Index>(k)) = cloud.points.col(keep[k]);
  const KdTree tree(pts);
  const auto start = tree.nearest(seed, radius);
  if (!start) throw ServiceError(422, "no points near the seed");

  std::vector<bool> seen(keep.size(), false);
  std::vector<Eigen::Index> frontier{start->index};
  std::vector<Eigen::Index> region;
  seen[static_cast<std::size_t>(start->index)] = true;
  while (!frontier.empty()) {
    const Eigen::Index i = frontier.back();
    frontier.pop_back();
    region.push_back(i);
    for (Eigen::Index j : tree.radius_search(pts.col(i), radius)) {
      if (!seen[static_cast<std::size_t>(j)]) {
        seen[static_cast<std::size_t>(j)] = true;
        frontier.push_back(j);
      }
    }
  }
  if (region_size) *region_size = region.size();
  if (region.size() < 5) throw ServiceError(422, "grown region has fewer than 5 points");
  std::sort(region.begin(), region.end());
  Eigen::Matrix3Xd member(3, static_cast<Eigen::Index>(region.size()));
  for (std::size_t k = 0; k < region.size(); ++k) member.col(static_cast<Eigen::Index>(k)) = pts.col(region[k]);
  Box3D box = fit_oriented_box(member);
  box.frame_id = cloud.frame_id;
  box.attributes["num_points"] = static_cast<double>(region.size());
  return box;
}

BoxProjection project_box(const Box3D& box, const CameraCalibration& calib) {
  if (!frames_match(box.frame_id, calib.extrinsics.source_frame)) {
    throw FrameError("box frame '" + box.frame_id + "' is not the camera's sensor frame '" +
                     calib.extrinsics.source_frame + "'");
  }
  const auto corners = box_corners(box);
  Eigen::Matrix3Xd pts(3, 8);
  for (int k = 0; k < 8; ++k) pts.col(k) = corners[static_cast<std::size_t>(k)];
  const std::vector<Projection> proj = project_points(calib.extrinsics.apply(pts), calib);
  BoxProjection out;
  bool any_front = false;
  for (int k = 0; k < 8; ++k) {
    out.corners[static_cast<std::size_t>(k)] = proj[static_cast<std::size_t>(k)];
    any_front = any_front || proj[static_cast<std::size_t>(k)].in_front;
  }
  out.behind = !any_front;
  for (const auto& e : box_edges()) {
    const Projection& a = proj[static_cast<std::size_t>(e[0])];
    const Projection& b = proj[static_cast<std::size_t>(e[1])];
    if (!a.in_front || !b.in_front) continue;
    out.segments.push_back({a.pixel, b.pixel});
    out.segment_edges.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Store

struct AnnotationStore::Entry {
  std::string id;
  fs::path dir;
  mutable std::shared_mutex mutex;
  Sequence current;
  std::vector<RevisionInfo> history;  ///< history[n] describes revision n
};

AnnotationStore::AnnotationStore(ServiceOptions options) : options_(std::move(options)) {
  if (options_.chunk_points < 1) throw ConfigError("chunk_points must be positive");
  if (!fs::is_directory(options_.data_dir)) throw ConfigError("data dir " + options_.data_dir.string() + " not found");
  std::vector<fs::path> dirs;
  for (const auto& d : fs::directory_iterator(options_.data_dir)) {
    if (d.is_directory() && fs::exists(d.path() / "sequence.json")) dirs.push_back(d.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const fs::path& dir : dirs) {
    auto e = std::make_unique<Entry>();
    e->id = dir.filename().string();
    e->dir = dir;
    e->current = load_openlabel((dir / "sequence.json").string());
    e->history.push_back({0, "import", 0, std::nullopt});
    const fs::path revs = dir / "revisions";
    if (fs::exists(revs / "LATEST")) {
      const std::int64_t latest = std::stoll(read_file(revs / "LATEST"));
      for (std::int64_t n = 1; n <= latest; ++n) {
        const json doc = json::parse(read_file(revs / revision_name(n)));
        e->history.push_back(revision_from_json(doc.at("openlabel").at("metadata").at("revision")));
        if (n == latest) {
          e->current = parse_openlabel_json(doc);
          e->current.metadata_extra.erase("revision");
        }
      }
    }
    sequences_.emplace(e->id, std::move(e));
  }
}

AnnotationStore::~AnnotationStore() = default;

AnnotationStore::Entry& AnnotationStore::entry(const std::string& id) const {
  auto it = sequences_.find(id);
  if (it == sequences_.end()) throw ServiceError(404, "unknown sequence '" + id + "'");
  return *it->second;
}

fs::path AnnotationStore::sequence_dir(const std::string& id) const { return entry(id).dir; }

json AnnotationStore::list_sequences() const {
  json out = json::array();
  for (const auto& [id, e] : sequences_) {
    std::shared_lock lock(e->mutex);
    out.push_back({{"id", id},
                   {"name", e->current.id},
                   {"frames", e->current.frames.size()},
                   {"revision", e->history.back().number}});
  }
  return out;
}

json AnnotationStore::sequence_info(const std::string& id) const {
  const Entry& e = entry(id);
  std::shared_lock lock(e.mutex);
  json frames = json::array();
  for (const Frame& f : e.current.frames) frames.push_back(f.index);
  json streams = json::object();
  for (const auto& [sid, s] : e.current.streams) streams[sid] = {{"type", std::string(to_string(s.kind))}};
  return {{"id", id}, {"name", e.current.id}, {"frames", frames}, {"streams", streams}, {"tags", e.current.tags},
          {"revision", e.history.back().number}};
}

PointCloud AnnotationStore::load_cloud(const Entry& e, const Frame& f, const std::string& stream) const {
  auto it = f.uris.find(stream);
  if (it == f.uris.end()) throw ServiceError(404, "frame has no data for stream '" + stream + "'");
  const fs::path p = e.dir / it->second;
  if (p.extension() != ".pcd") throw ServiceError(404, "stream '" + stream + "' is not a point cloud");
  PointCloud cloud = load_point_cloud(p);
  cloud.frame_id = stream;
  return cloud;
}

json AnnotationStore::frame_payload(const std::string& id, std::int64_t index, double lod) const {
  const Entry& e = entry(id);
  Frame frame;
  std::int64_t revision = 0;
  std::map<std::string, StreamDescriptor> streams;
  {
    std::shared_lock lock(e.mutex);
    const Frame* f = find_frame(e.current, index);
    if (!f) throw ServiceError(404, "sequence '" + id + "' has no frame " + std::to_string(index));
    frame = *f;
    revision = e.history.back().number;
    streams = e.current.streams;
  }
  (void)lod_indices(0, lod);  // validates lod

  json out{{"sequence", id}, {"index", index}, {"revision", revision}, {"timestamps_us", frame.timestamps_us},
           {"labels", labels_json(frame.labels)}};
  json clouds = json::array();
  json images = json::array();
  json calibrations = json::object();
  for (const auto& [sid, s] : streams) {
    if (s.camera) {
      const CameraCalibration& c = *s.camera;
      calibrations[sid] = {{"fx", c.intrinsics.fx},
                           {"fy", c.intrinsics.fy},
                           {"cx", c.intrinsics.cx},
                           {"cy", c.intrinsics.cy},
                           {"distortion", {c.distortion.k1, c.distortion.k2, c.distortion.k3, c.distortion.p1, c.distortion.p2}},
                           {"width", c.width},
                           {"height", c.height},
                           {"extrinsics", pose_to_json(c.extrinsics)}};
    }
  }
  for (const auto& [sid, uri] : frame.uris) {
    if (fs::path(uri).extension() == ".pcd") {
      const PointCloud cloud = load_cloud(e, frame, sid);
      const auto n = static_cast<Eigen::Index>(lod_indices(cloud.size(), lod).size());
      const Eigen::Index chunks = n == 0 ? 0 : (n + options_.chunk_points - 1) / options_.chunk_points;
      clouds.push_back({{"stream", sid},
                        {"total_points", cloud.size()},
                        {"points", n},
                        {"lod", lod},
                        {"fields", cloud.has_intensity() ? 4 : 3},
                        {"chunk_points", options_.chunk_points},
                        {"chunks", chunks},
                        {"url", "/v1/sequences/" + id + "/frames/" + std::to_string(index) + "/cloud/" + sid}});
    } else {
      images.push_back({{"stream", sid}, {"url", "/v1/files/" + id + "/" + uri}});
    }
  }
  out["clouds"] = clouds;
  out["images"] = images;
  out["calibrations"] = calibrations;
  return out;
}

std::string AnnotationStore::cloud_chunk(const std::string& id, std::int64_t index, const std::string& stream, double lod,
                                         std::uint32_t chunk) const {
  const Entry& e = entry(id);
  Frame frame;
  {
    std::shared_lock lock(e.mutex);
    const Frame* f = find_frame(e.current, index);
    if (!f) throw ServiceError(404, "sequence '" + id + "' has no frame " + std::to_string(index));
    frame = *f;
  }
  const PointCloud cloud = load_cloud(e, frame, stream);
  const PointCloud kept = select_points(cloud, lod_indices(cloud.size(), lod));
  const Eigen::Index begin = static_cast<Eigen::Index>(chunk) * options_.chunk_points;
  if (begin >= kept.size() && !(chunk == 0 && kept.size() == 0)) throw ServiceError(404, "chunk out of range");
  const Eigen::Index end = std::min(kept.size(), begin + options_.chunk_points);
  return encode_chunk(kept, begin, end, chunk);
}

RevisionInfo AnnotationStore::commit(Entry& e, Sequence next, const std::string& author,
                                     std::optional<std::int64_t> frame) {
  RevisionInfo info{e.history.back().number + 1, author, now_us(), frame};
  Sequence doc = next;
  doc.metadata_extra["revision"] = revision_json(info);
  const fs::path revs = e.dir / "revisions";
  fs::create_directories(revs);
  write_file_atomic(revs / revision_name(info.number), write_openlabel(doc));
  write_file_atomic(revs / "LATEST", std::to_string(info.number));
  e.current = std::move(next);
  e.history.push_back(info);
  return info;
}

namespace {

void check_labels(const Sequence& seq, const std::vector<Box3D>& labels) {
  std::set<std::string> ids;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Box3D& b = labels[i];
    try {
      validate(b);
    } catch (const InvalidBox& err) {
      throw ServiceError(422, "label " + std::to_string(i) + ": " + err.what());
    }
    if (!b.frame_id.empty() && !seq.streams.count(b.frame_id)) {
      throw ServiceError(422, "label " + std::to_string(i) + ": unknown stream '" + b.frame_id + "'");
    }
    if (b.track_id && !ids.insert(*b.track_id).second) {
      throw ServiceError(422, "track '" + *b.track_id + "' appears twice in the frame");
    }
  }
}

}  // namespace

RevisionInfo AnnotationStore::put_labels(const std::string& id, std::int64_t index, std::int64_t base_revision,
                                         const std::vector<Box3D>& labels, const std::string& author) {
  Entry& e = entry(id);
  std::unique_lock lock(e.mutex);
  const Frame* f = find_frame(e.current, index);
  if (!f) throw ServiceError(404, "sequence '" + id + "' has no frame " + std::to_string(index));
  const std::int64_t latest = e.history.back().number;
  if (base_revision != latest) {
    throw ServiceError(409, "revision " + std::to_string(base_revision) + " is stale, latest is " + std::to_string(latest),
                       {{"revision", latest}, {"frame", index}, {"labels", labels_json(f->labels)}});
  }
  check_labels(e.current, labels);
  Sequence next = e.current;
  find_frame(next, index)->labels = labels;
  return commit(e, std::move(next), author, index);
}

RevisionInfo AnnotationStore::copy_next(const std::string& id, std::int64_t index, const std::vector<std::string>& track_ids,
                                        std::optional<std::int64_t> base_revision, const std::string& author) {
  Entry& e = entry(id);
  std::unique_lock lock(e.mutex);
  const Frame* f = find_frame(e.current, index);
  if (!f) throw ServiceError(404, "sequence '" + id + "' has no frame " + std::to_string(index));
  const Frame* g = find_frame(e.current, index + 1);
  if (!g) throw ServiceError(404, "frame " + std::to_string(index) + " is the last frame");
  const std::int64_t latest = e.history.back().number;
  if (base_revision && *base_revision != latest) {
    throw ServiceError(409, "revision " + std::to_string(*base_revision) + " is stale, latest is " + std::to_string(latest),
                       {{"revision", latest}, {"frame", index + 1}, {"labels", labels_json(g->labels)}});
  }
  std::set<std::string> wanted(track_ids.begin(), track_ids.end());
  std::vector<Box3D> copied;
  for (const Box3D& b : f->labels) {
    if (b.track_id && (wanted.empty() || wanted.count(*b.track_id))) copied.push_back(b);
  }
  for (const std::string& t : wanted) {
    const bool found = std::any_of(copied.begin(), copied.end(), [&](const Box3D& b) { return *b.track_id == t; });
    if (!found) throw ServiceError(422, "frame " + std::to_string(index) + " has no track '" + t + "'");
  }
  Sequence next = e.current;
  Frame* dst = find_frame(next, index + 1);
  std::set<std::string> replaced;
  for (const Box3D& b : copied) replaced.insert(*b.track_id);
  std::erase_if(dst->labels, [&](const Box3D& b) { return b.track_id && replaced.count(*b.track_id); });
  dst->labels.insert(dst->labels.end(), copied.begin(), copied.end());
  return commit(e, std::move(next), author, index + 1);
}

Box3D AnnotationStore::autofit(const std::string& id, std::int64_t index, const Eigen::Vector3d& seed, double radius,
                               std::optional<std::string> stream, std::optional<double> min_z) const {
  const Entry& e = entry(id);
  Frame frame;
  std::map<std::string, StreamDescriptor> streams;
  {
    std::shared_lock lock(e.mutex);
    const Frame* f = find_frame(e.current, index);
    if (!f) throw ServiceError(404, "sequence '" + id + "' has no frame " + std::to_string(index));
    frame = *f;
    streams = e.current.streams;
  }
  if (!stream) {
    for (const auto& [sid, uri] : frame.uris) {
      if (fs::path(uri).extension() == ".pcd") {
        stream = sid;
        break;
      }
    }
    if (!stream) throw ServiceError(422, "frame has no point cloud");
  }
  return autofit_box(load_cloud(e, frame, *stream), seed, radius, min_z);
}

BoxProjection AnnotationStore::project(const std::string& id, std::int64_t index, const std::string& camera,
                                       const std::string& track_id) const {
  const Entry& e = entry(id);
  std::shared_lock lock(e.mutex);
  const Frame* f = find_frame(e.current, index);
  if (!f) throw ServiceError(404, "sequence '" + id + "' has no frame " + std::to_string(index));
  auto s = e.current.streams.find(camera);
  if (s == e.current.streams.end() || !s->second.camera) throw ServiceError(404, "unknown camera '" + camera + "'");
  for (const Box3D& b : f->labels) {
    if (b.track_id == track_id) return project_box(b, *s->second.camera);
  }
  throw ServiceError(404, "frame " + std::to_string(index) + " has no track '" + track_id + "'");
}

std::vector<RevisionInfo> AnnotationStore::revisions(const std::string& id) const {
  const Entry& e = entry(id);
  std::shared_lock lock(e.mutex);
  return e.history;
}

std::string AnnotationStore::revision_document(const std::string& id, std::int64_t n) const {
  const Entry& e = entry(id);
  {
    std::shared_lock lock(e.mutex);
    if (n < 0 || n > e.history.back().number) throw ServiceError(404, "no revision " + std::to_string(n));
  }
  if (n == 0) return read_file(e.dir / "sequence.json");
  return read_file(e.dir / "revisions" / revision_name(n));
}

std::int64_t AnnotationStore::latest_revision(const std::string& id) const {
  const Entry& e = entry(id);
  std::shared_lock lock(e.mutex);
  return e.history.back().number;
}

Sequence AnnotationStore::snapshot(const std::string& id) const {
  const Entry& e = entry(id);
  std::shared_lock lock(e.mutex);
  return e.current;
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

json box_projection_json(const BoxProjection& p) {
  json corners = json::array();
  json in_front = json::array();
  for (const Projection& c : p.corners) {
    corners.push_back(c.in_front ? json{c.pixel.x(), c.pixel.y()} : json(nullptr));
    in_front.push_back(c.in_front);
  }
  json segments = json::array();
  for (const auto& s : p.segments) segments.push_back({{s[0].x(), s[0].y()}, {s[1].x(), s[1].y()}});
  return {{"corners", corners}, {"in_front", in_front}, {"segments", segments}, {"edges", p.segment_edges},
          {"behind", p.behind}};
}

json error_json(const std::string& message, const json& extra = nullptr) {
  json j = extra.is_object() ? extra : json::object();
  j["error"] = message;
  return j;
}

Eigen::Vector3d vec3(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw ServiceError(400, std::string(what) + " must be [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

std::int64_t int_param(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) throw ServiceError(400, std::string("missing query parameter '") + key + "'");
  const std::string v = req.get_param_value(key);
  std::size_t pos = 0;
  std::int64_t out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ServiceError(400, std::string("'") + key + "' must be an integer");
  return out;
}

double lod_param(const httplib::Request& req) {
  if (!req.has_param("lod")) return 1.0;
  try {
    return std::stod(req.get_param_value("lod"));
  } catch (const std::exception&) {
    throw ServiceError(400, "lod must be a number");
  }
}

std::int64_t path_int(const std::string& s) {
  std::size_t pos = 0;
  const std::int64_t v = std::stoll(s, &pos);
  if (pos != s.size()) throw ServiceError(404, "bad index");
  return v;
}

std::vector<Box3D> boxes_from(const json& arr) {
  if (!arr.is_array()) throw ServiceError(400, "labels must be an array");
  std::vector<Box3D> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    try {
      out.push_back(box_from_json(arr[i]));
    } catch (const InvalidBox& e) {
      throw ServiceError(422, "label " + std::to_string(i) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ServiceError(422, "label " + std::to_string(i) + e.path() + ": " + e.what());
    }
  }
  return out;
}

Box3D box_from(const json& j, const char* what) {
  try {
    return box_from_json(j);
  } catch (const InvalidBox& e) {
    throw ServiceError(422, std::string(what) + ": " + e.what());
  } catch (const ParseError& e) {
    throw ServiceError(422, std::string(what) + ": " + e.what());
  }
}

}  // namespace

struct AnnotationServer::Impl {
  explicit Impl(ServiceOptions o) : store(std::move(o)) {}

  AnnotationStore store;
  httplib::Server server;
  std::thread thread;

  template <typename F>
  httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const ServiceError& e) {
        res.status = e.status();
        res.set_content(error_json(e.what(), e.body()).dump(), "application/json");
      } catch (const json::exception& e) {
        res.status = 400;
        res.set_content(error_json(std::string("bad request body: ") + e.what()).dump(), "application/json");
      } catch (const InvalidBox& e) {
        res.status = 422;
        res.set_content(error_json(e.what()).dump(), "application/json");
      } catch (const FrameError& e) {
        res.status = 422;
        res.set_content(error_json(e.what()).dump(), "application/json");
      } catch (const Error& e) {
        res.status = 422;
        res.set_content(error_json(e.what()).dump(), "application/json");
      } catch (const std::exception& e) {
        res.status = 500;
        res.set_content(error_json(e.what()).dump(), "application/json");
      }
    };
  }

  static void send(httplib::Response& res, const json& j) { res.set_content(j.dump(), "application/json"); }

  void routes() {
    server.Get("/v1/sequences", guarded([this](const httplib::Request&, httplib::Response& res) {
      send(res, store.list_sequences());
    }));
    server.Get(R"(/v1/sequences/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send(res, store.sequence_info(req.matches[1]));
    }));
    server.Get(R"(/v1/sequences/([^/]+)/frames/(-?\d+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send(res, store.frame_payload(req.matches[1], path_int(req.matches[2]), lod_param(req)));
    }));
    server.Get(R"(/v1/sequences/([^/]+)/frames/(-?\d+)/cloud/([^/]+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const std::int64_t chunk = req.has_param("chunk") ? int_param(req, "chunk") : 0;
                 if (chunk < 0) throw ServiceError(400, "chunk must be non-negative");
                 res.set_content(store.cloud_chunk(req.matches[1], path_int(req.matches[2]), req.matches[3], lod_param(req),
                                                   static_cast<std::uint32_t>(chunk)),
                                 "application/octet-stream");
               }));
    server.Put(R"(/v1/sequences/([^/]+)/frames/(-?\d+)/labels)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const json body = json::parse(req.body);
                 if (!body.contains("base_revision")) throw ServiceError(400, "base_revision is required");
                 const RevisionInfo r = store.put_labels(req.matches[1], path_int(req.matches[2]),
                                                         body.at("base_revision").get<std::int64_t>(),
                                                         boxes_from(body.at("labels")), body.value("author", ""));
                 send(res, revision_json(r));
               }));
    server.Get(R"(/v1/sequences/([^/]+)/revisions)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      json out = json::array();
      for (const RevisionInfo& r : store.revisions(req.matches[1])) out.push_back(revision_json(r));
      send(res, out);
    }));
    server.Get(R"(/v1/sequences/([^/]+)/revisions/(\d+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 res.set_content(store.revision_document(req.matches[1], path_int(req.matches[2])), "application/json");
               }));
    server.Post("/v1/interpolate", guarded([](const httplib::Request& req, httplib::Response& res) {
      const json body = json::parse(req.body);
      InterpolationRequest r;
      r.track_id = body.at("track_id").get<std::string>();
      r.start_frame = body.at("start").at("frame").get<std::int64_t>();
      r.start_box = box_from(body.at("start").at("box"), "start box");
      r.end_frame = body.at("end").at("frame").get<std::int64_t>();
      r.end_box = box_from(body.at("end").at("box"), "end box");
      if (body.contains("from")) r.from = body["from"].get<std::int64_t>();
      if (body.contains("to")) r.to = body["to"].get<std::int64_t>();
      json boxes = json::array();
      for (const auto& [f, b] : interpolate_track(r)) boxes.push_back({{"frame", f}, {"box", box_to_json(b)}});
      send(res, {{"track_id", r.track_id}, {"boxes", boxes}});
    }));
    server.Post("/v1/autofit", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = json::parse(req.body);
      std::optional<std::string> stream;
      if (body.contains("stream")) stream = body["stream"].get<std::string>();
      std::optional<double> min_z;
      if (body.contains("min_z")) min_z = body["min_z"].get<double>();
      const Box3D box = store.autofit(body.at("sequence").get<std::string>(), body.at("frame").get<std::int64_t>(),
                                      vec3(body.at("seed"), "seed"), body.value("radius", 0.5), stream, min_z);
      send(res, {{"box", box_to_json(box)}});
    }));
    server.Post("/v1/copy-next", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = json::parse(req.body);
      std::vector<std::string> ids;
      if (body.contains("track_ids")) ids = body["track_ids"].get<std::vector<std::string>>();
      std::optional<std::int64_t> base;
      if (body.contains("base_revision")) base = body["base_revision"].get<std::int64_t>();
      const RevisionInfo r = store.copy_next(body.at("sequence").get<std::string>(), body.at("frame").get<std::int64_t>(),
                                             ids, base, body.value("author", ""));
      send(res, revision_json(r));
    }));
    server.Get("/v1/project", guarded([this](const httplib::Request& req, httplib::Response& res) {
      for (const char* k : {"sequence", "camera", "track"}) {
        if (!req.has_param(k)) throw ServiceError(400, std::string("missing query parameter '") + k + "'");
      }
      const BoxProjection p = store.project(req.get_param_value("sequence"), int_param(req, "frame"),
                                            req.get_param_value("camera"), req.get_param_value("track"));
      send(res, box_projection_json(p));
    }));
    for (const json& s : store.list_sequences()) {
      const std::string id = s["id"];
      server.set_mount_point("/v1/files/" + id, store.sequence_dir(id).string());
    }
  }
};

AnnotationServer::AnnotationServer(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {
  impl_->routes();
}

AnnotationServer::~AnnotationServer() { stop(); }

AnnotationStore& AnnotationServer::store() { return impl_->store; }

int AnnotationServer::start(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void AnnotationServer::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

void AnnotationServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace v2x

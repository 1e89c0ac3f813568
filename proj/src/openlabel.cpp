#include "v2x/openlabel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace v2x {

using nlohmann::json;

std::string_view to_string(SensorKind kind) {
  switch (kind) {
    case SensorKind::Lidar: return "lidar";
    case SensorKind::Camera: return "camera";
    case SensorKind::Other: return "other";
  }
  return "other";
}

SensorKind sensor_kind_from_string(std::string_view name) {
  if (name == "lidar") return SensorKind::Lidar;
  if (name == "camera") return SensorKind::Camera;
  return SensorKind::Other;
}

namespace {

std::string escape_pointer(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~') out += "~0";
    else if (c == '/') out += "~1";
    else out += c;
  }
  return out;
}

std::string child(const std::string& path, const std::string& key) { return path + "/" + escape_pointer(key); }
std::string child(const std::string& path, std::size_t i) { return path + "/" + std::to_string(i); }

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ParseError("OpenLABEL schema violation at " + (path.empty() ? std::string("/") : path) + ": " + what,
                   path);
}

const json& require(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) fail(child(path, key), "missing required field");
  return *it;
}

double as_number(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

std::int64_t as_integer(const json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<std::int64_t>();
}

std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

template <std::size_t N>
std::array<double, N> as_numbers(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != N) fail(path, "expected an array of " + std::to_string(N) + " numbers");
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = as_number(j[i], child(path, i));
  return out;
}

json object_without(const json& j, std::initializer_list<const char*> known) {
  json extra = json::object();
  if (!j.is_object()) return extra;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) { return it.key() == k; }) ==
        known.end()) {
      extra[it.key()] = it.value();
    }
  }
  return extra;
}

void merge_into(json& target, const json& extra) {
  if (!extra.is_object()) return;
  for (auto it = extra.begin(); it != extra.end(); ++it) target[it.key()] = it.value();
}

Pose parse_pose(const json& j, const std::string& path) {
  Pose pose;
  if (auto it = j.find("src"); it != j.end()) pose.source_frame = as_string(*it, child(path, "src"));
  if (auto it = j.find("dst"); it != j.end()) pose.target_frame = as_string(*it, child(path, "dst"));
  const std::string tpath = child(path, "transform_src_to_dst");
  const json& t = require(j, "transform_src_to_dst", path);
  if (auto it = t.find("matrix4x4"); it != t.end()) {
    const auto m = as_numbers<16>(*it, child(tpath, "matrix4x4"));
    Eigen::Matrix4d mat;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) mat(r, c) = m[static_cast<std::size_t>(r * 4 + c)];
    Pose p = Pose::from_matrix(mat, pose.source_frame, pose.target_frame);
    return p;
  }
  const auto q = as_numbers<4>(require(t, "quaternion", tpath), child(tpath, "quaternion"));
  const auto tr = as_numbers<3>(require(t, "translation", tpath), child(tpath, "translation"));
  Eigen::Quaterniond quat(q[3], q[0], q[1], q[2]);
  if (quat.norm() < 1e-12) fail(child(tpath, "quaternion"), "zero quaternion");
  pose.rotation = quat.normalized();
  pose.translation = Eigen::Vector3d(tr[0], tr[1], tr[2]);
  return pose;
}

CameraCalibration parse_intrinsics(const json& j, const std::string& path) {
  CameraCalibration calib;
  const auto m = as_numbers<12>(require(j, "camera_matrix_3x4", path), child(path, "camera_matrix_3x4"));
  calib.intrinsics = Intrinsics{m[0], m[5], m[2], m[6]};
  if (auto it = j.find("distortion_coeffs_1xN"); it != j.end()) {
    const std::string dpath = child(path, "distortion_coeffs_1xN");
    if (!it->is_array() || it->size() > 5) fail(dpath, "expected up to 5 coefficients [k1,k2,p1,p2,k3]");
    std::array<double, 5> d{};
    for (std::size_t i = 0; i < it->size(); ++i) d[i] = as_number((*it)[i], child(dpath, i));
    calib.distortion = Distortion{d[0], d[1], d[4], d[2], d[3]};
  }
  calib.width = static_cast<int>(as_integer(require(j, "width_px", path), child(path, "width_px")));
  calib.height = static_cast<int>(as_integer(require(j, "height_px", path), child(path, "height_px")));
  return calib;
}

void parse_attributes(const json& j, const std::string& path, Box3D& box, Diagnostics* diag) {
  if (!j.is_object()) fail(path, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string kpath = child(path, it.key());
    if (!it->is_array()) fail(kpath, "expected an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      const json& a = (*it)[i];
      const std::string apath = child(kpath, i);
      const std::string name = as_string(require(a, "name", apath), child(apath, "name"));
      const json& val = require(a, "val", apath);
      if (it.key() == "num") {
        const double v = as_number(val, child(apath, "val"));
        if (name == "score") {
          box.score = v;
          continue;
        }
        box.attributes[name] = v;
      } else if (it.key() == "text") {
        box.attributes[name] = as_string(val, child(apath, "val"));
      } else if (it.key() == "boolean") {
        if (!val.is_boolean()) fail(child(apath, "val"), "expected a boolean");
        box.attributes[name] = val.get<bool>();
      } else {
        warn(diag, "unsupported attribute kind '" + it.key() + "' at " + kpath + " dropped");
        break;
      }
      if (std::find(std::begin(kDocumentedAttributes), std::end(kDocumentedAttributes), name) ==
          std::end(kDocumentedAttributes)) {
        warn(diag, "undocumented attribute '" + name + "' at " + apath);
      }
    }
  }
}

Box3D parse_cuboid(const json& c, const std::string& path, Diagnostics* diag) {
  Box3D box;
  const auto v = as_numbers<10>(require(c, "val", path), child(path, "val"));
  box.center = Eigen::Vector3d(v[0], v[1], v[2]);
  Eigen::Quaterniond q(v[6], v[3], v[4], v[5]);
  if (q.norm() < 1e-12) fail(child(path, "val"), "zero quaternion");
  q.normalize();
  const Eigen::Matrix3d r = q.toRotationMatrix();
  if (std::abs(r(2, 0)) > 1e-6 || std::abs(r(2, 1)) > 1e-6) {
    warn(diag, "cuboid at " + path + " has roll/pitch; flattened to yaw");
  }
  box.yaw = yaw_of(q);
  box.dimensions = Eigen::Vector3d(v[7], v[8], v[9]);
  if (auto it = c.find("coordinate_system"); it != c.end()) {
    box.frame_id = as_string(*it, child(path, "coordinate_system"));
  }
  if (auto it = c.find("attributes"); it != c.end()) {
    parse_attributes(*it, child(path, "attributes"), box, diag);
  }
  try {
    validate(box);
  } catch (const InvalidBox& e) {
    fail(path, e.what());
  }
  return box;
}

json attributes_json(const Box3D& box) {
  json num = json::array();
  json text = json::array();
  json boolean = json::array();
  for (const auto& [name, value] : box.attributes) {
    if (const double* d = std::get_if<double>(&value)) num.push_back({{"name", name}, {"val", *d}});
    else if (const std::string* s = std::get_if<std::string>(&value)) text.push_back({{"name", name}, {"val", *s}});
    else boolean.push_back({{"name", name}, {"val", std::get<bool>(value)}});
  }
  if (box.score) num.push_back({{"name", "score"}, {"val", *box.score}});
  json out = json::object();
  if (!num.empty()) out["num"] = num;
  if (!text.empty()) out["text"] = text;
  if (!boolean.empty()) out["boolean"] = boolean;
  return out;
}

json cuboid_json(const Box3D& box) {
  const auto v = cuboid_values(box);
  json c = {{"name", "shape3D"}, {"val", v}};
  if (!box.frame_id.empty()) c["coordinate_system"] = box.frame_id;
  json attrs = attributes_json(box);
  if (!attrs.empty()) c["attributes"] = attrs;
  return c;
}

std::int64_t frame_key_to_index(const std::string& key, const std::string& path) {
  std::size_t pos = 0;
  std::int64_t value = 0;
  try {
    value = std::stoll(key, &pos);
  } catch (const std::exception&) {
    fail(path, "frame key is not an integer");
  }
  if (pos != key.size()) fail(path, "frame key is not an integer");
  return value;
}

}  // namespace

std::array<double, 10> cuboid_values(const Box3D& box) {
  const double half = 0.5 * box.yaw;
  return {box.center.x(), box.center.y(), box.center.z(), 0.0, 0.0, std::sin(half), std::cos(half),
          box.dimensions.x(), box.dimensions.y(), box.dimensions.z()};
}

json pose_to_json(const Pose& pose) {
  const auto& q = pose.rotation;
  return {{"src", pose.source_frame},
          {"dst", pose.target_frame},
          {"transform_src_to_dst",
           {{"quaternion", {q.x(), q.y(), q.z(), q.w()}},
            {"translation", {pose.translation.x(), pose.translation.y(), pose.translation.z()}}}}};
}

Pose pose_from_json(const json& j) { return parse_pose(j, ""); }

json box_to_json(const Box3D& box) {
  json j = cuboid_json(box);
  j["type"] = std::string(to_string(box.category));
  if (box.track_id) j["track_id"] = *box.track_id;
  return j;
}

Box3D box_from_json(const json& j, Diagnostics* diag) {
  Box3D box = parse_cuboid(j, "", diag);
  if (auto it = j.find("type"); it != j.end()) box.category = category_from_string(as_string(*it, "/type"));
  if (auto it = j.find("track_id"); it != j.end()) box.track_id = as_string(*it, "/track_id");
  return box;
}

Sequence parse_openlabel(std::string_view document, Diagnostics* diag) {
  json doc;
  try {
    doc = json::parse(document.begin(), document.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid JSON at byte ") + std::to_string(e.byte) + ": " + e.what(), "",
                     e.byte);
  }
  return parse_openlabel_json(doc, diag);
}

Sequence parse_openlabel_json(const json& doc, Diagnostics* diag) {
  const std::string root = "/openlabel";
  const json& ol = require(doc, "openlabel", "");
  if (!ol.is_object()) fail(root, "expected an object");
  Sequence seq;
  seq.extra = object_without(ol, {"metadata", "streams", "objects", "frames"});

  if (auto it = ol.find("metadata"); it != ol.end()) {
    const std::string mpath = child(root, "metadata");
    if (!it->is_object()) fail(mpath, "expected an object");
    if (auto n = it->find("name"); n != it->end()) seq.id = as_string(*n, child(mpath, "name"));
    if (auto t = it->find("tags"); t != it->end()) {
      if (!t->is_object()) fail(child(mpath, "tags"), "expected an object");
      for (auto tag = t->begin(); tag != t->end(); ++tag) {
        seq.tags[tag.key()] = as_string(tag.value(), child(child(mpath, "tags"), tag.key()));
      }
    }
    seq.metadata_extra = object_without(*it, {"name", "tags"});
    // the writer always emits the current schema version
    if (seq.metadata_extra.value("schema_version", json()) == "1.0.0") seq.metadata_extra.erase("schema_version");
  }

  if (auto it = ol.find("streams"); it != ol.end()) {
    const std::string spath = child(root, "streams");
    if (!it->is_object()) fail(spath, "expected an object");
    for (auto s = it->begin(); s != it->end(); ++s) {
      const std::string path = child(spath, s.key());
      if (!s->is_object()) fail(path, "expected an object");
      StreamDescriptor desc;
      desc.kind = sensor_kind_from_string(as_string(require(*s, "type", path), child(path, "type")));
      if (auto d = s->find("description"); d != s->end()) desc.description = as_string(*d, child(path, "description"));
      json props_extra = json::object();
      if (auto props = s->find("stream_properties"); props != s->end()) {
        const std::string ppath = child(path, "stream_properties");
        if (!props->is_object()) fail(ppath, "expected an object");
        if (auto in = props->find("intrinsics_pinhole"); in != props->end()) {
          desc.camera = parse_intrinsics(*in, child(ppath, "intrinsics_pinhole"));
        }
        if (auto ex = props->find("extrinsics"); ex != props->end()) {
          Pose pose = parse_pose(*ex, child(ppath, "extrinsics"));
          if (desc.camera) desc.camera->extrinsics = pose;
          else desc.pose = pose;
        }
        props_extra = object_without(*props, {"intrinsics_pinhole", "extrinsics"});
      }
      if (desc.kind == SensorKind::Camera && !desc.camera) {
        warn(diag, "camera stream '" + s.key() + "' has no calibration");
      }
      desc.extra = object_without(*s, {"type", "description", "stream_properties"});
      if (!props_extra.empty()) desc.extra["stream_properties"] = props_extra;
      seq.streams.emplace(s.key(), std::move(desc));
    }
  }

  std::map<std::string, Category> object_types;
  if (auto it = ol.find("objects"); it != ol.end()) {
    const std::string opath = child(root, "objects");
    if (!it->is_object()) fail(opath, "expected an object");
    for (auto o = it->begin(); o != it->end(); ++o) {
      const std::string path = child(opath, o.key());
      object_types[o.key()] = category_from_string(as_string(require(*o, "type", path), child(path, "type")));
    }
  }

  if (auto it = ol.find("frames"); it != ol.end()) {
    const std::string fpath = child(root, "frames");
    if (!it->is_object()) fail(fpath, "expected an object");
    for (auto f = it->begin(); f != it->end(); ++f) {
      const std::string path = child(fpath, f.key());
      if (!f->is_object()) fail(path, "expected an object");
      Frame frame;
      frame.index = frame_key_to_index(f.key(), path);
      frame.extra = object_without(*f, {"frame_properties", "objects"});
      if (auto props = f->find("frame_properties"); props != f->end()) {
        const std::string ppath = child(path, "frame_properties");
        if (!props->is_object()) fail(ppath, "expected an object");
        json props_extra = object_without(*props, {"streams", "transforms"});
        if (!props_extra.empty()) frame.extra["frame_properties"] = props_extra;
        if (auto streams = props->find("streams"); streams != props->end()) {
          const std::string stpath = child(ppath, "streams");
          if (!streams->is_object()) fail(stpath, "expected an object");
          for (auto s = streams->begin(); s != streams->end(); ++s) {
            const std::string spath = child(stpath, s.key());
            if (auto uri = s->find("uri"); uri != s->end()) frame.uris[s.key()] = as_string(*uri, child(spath, "uri"));
            if (auto sp = s->find("stream_properties"); sp != s->end()) {
              const std::string sppath = child(spath, "stream_properties");
              const json& sync = require(*sp, "sync", sppath);
              frame.timestamps_us[s.key()] =
                  as_integer(require(sync, "timestamp_us", child(sppath, "sync")),
                             child(child(sppath, "sync"), "timestamp_us"));
            }
          }
        }
        if (auto tr = props->find("transforms"); tr != props->end()) {
          const std::string tpath = child(ppath, "transforms");
          if (!tr->is_object()) fail(tpath, "expected an object");
          for (auto t = tr->begin(); t != tr->end(); ++t) {
            frame.transforms[t.key()] = parse_pose(*t, child(tpath, t.key()));
          }
        }
      }
      if (auto objects = f->find("objects"); objects != f->end()) {
        const std::string opath = child(path, "objects");
        if (!objects->is_object()) fail(opath, "expected an object");
        for (auto o = objects->begin(); o != objects->end(); ++o) {
          const std::string obj_path = child(opath, o.key());
          const json& data = require(*o, "object_data", obj_path);
          const std::string dpath = child(obj_path, "object_data");
          const json& cuboids = require(data, "cuboid", dpath);
          const std::string cpath = child(dpath, "cuboid");
          if (!cuboids.is_array() || cuboids.empty()) fail(cpath, "expected a non-empty array");
          if (cuboids.size() > 1) warn(diag, "object at " + obj_path + " has several cuboids; using the first");
          Box3D box = parse_cuboid(cuboids[0], child(cpath, std::size_t{0}), diag);
          const bool untracked = o.key().rfind(std::string(kUntrackedPrefix), 0) == 0;
          if (!untracked) box.track_id = o.key();
          if (auto t = o->find("type"); t != o->end()) {
            box.category = category_from_string(as_string(*t, child(obj_path, "type")));
          } else if (auto known = object_types.find(o.key()); known != object_types.end()) {
            box.category = known->second;
          } else {
            warn(diag, "object at " + obj_path + " has no type; using OTHER");
          }
          frame.labels.push_back(std::move(box));
        }
      }
      seq.frames.push_back(std::move(frame));
    }
  }
  std::sort(seq.frames.begin(), seq.frames.end(),
            [](const Frame& a, const Frame& b) { return a.index < b.index; });
  validate(seq);
  return seq;
}

void validate(const Sequence& seq) {
  const std::string root = "/openlabel/frames";
  std::map<std::string, std::int64_t> last_stamp;
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const Frame& f = seq.frames[i];
    const std::string path = child(root, std::to_string(f.index));
    if (i > 0 && seq.frames[i - 1].index == f.index) fail(path, "duplicate frame index");
    for (const auto& [stream, stamp] : f.timestamps_us) {
      auto it = last_stamp.find(stream);
      if (it != last_stamp.end() && stamp <= it->second) {
        fail(child(child(child(path, "frame_properties"), "streams"), stream),
             "timestamps must increase strictly per stream");
      }
      last_stamp[stream] = stamp;
    }
    std::set<std::string> seen_tracks;
    for (std::size_t b = 0; b < f.labels.size(); ++b) {
      const Box3D& box = f.labels[b];
      if (box.track_id && !seen_tracks.insert(*box.track_id).second) {
        fail(child(child(path, "objects"), *box.track_id), "track id appears twice in one frame");
      }
      const std::string bpath = child(child(path, "objects"), box.track_id.value_or(std::to_string(b)));
      if (!box.frame_id.empty() && !seq.streams.contains(box.frame_id)) {
        fail(bpath, "coordinate_system '" + box.frame_id + "' is not a declared stream");
      }
      try {
        validate(box);
      } catch (const InvalidBox& e) {
        fail(bpath, e.what());
      }
    }
  }
}

json openlabel_json(const Sequence& seq) {
  json ol = json::object();
  json metadata = {{"schema_version", "1.0.0"}};
  merge_into(metadata, seq.metadata_extra);
  if (!seq.id.empty()) metadata["name"] = seq.id;
  if (!seq.tags.empty()) metadata["tags"] = seq.tags;
  ol["metadata"] = metadata;

  if (!seq.streams.empty()) {
    json streams = json::object();
    for (const auto& [id, desc] : seq.streams) {
      json s = desc.extra;
      s["type"] = std::string(to_string(desc.kind));
      if (!desc.description.empty()) s["description"] = desc.description;
      json props = s.value("stream_properties", json::object());
      if (desc.camera) {
        const auto& k = desc.camera->intrinsics;
        const auto& d = desc.camera->distortion;
        props["intrinsics_pinhole"] = {
            {"camera_matrix_3x4", {k.fx, 0.0, k.cx, 0.0, 0.0, k.fy, k.cy, 0.0, 0.0, 0.0, 1.0, 0.0}},
            {"distortion_coeffs_1xN", {d.k1, d.k2, d.p1, d.p2, d.k3}},
            {"width_px", desc.camera->width},
            {"height_px", desc.camera->height}};
      }
      if (desc.camera) props["extrinsics"] = pose_to_json(desc.camera->extrinsics);
      else if (desc.pose) props["extrinsics"] = pose_to_json(*desc.pose);
      if (!props.empty()) s["stream_properties"] = props;
      streams[id] = s;
    }
    ol["streams"] = streams;
  }

  json objects = json::object();
  json frames = json::object();
  for (const Frame& f : seq.frames) {
    json jf = f.extra;
    json props = jf.value("frame_properties", json::object());
    if (!f.uris.empty() || !f.timestamps_us.empty()) {
      json streams = json::object();
      for (const auto& [s, uri] : f.uris) streams[s]["uri"] = uri;
      for (const auto& [s, t] : f.timestamps_us) streams[s]["stream_properties"]["sync"]["timestamp_us"] = t;
      props["streams"] = streams;
    }
    if (!f.transforms.empty()) {
      json tr = json::object();
      for (const auto& [name, pose] : f.transforms) tr[name] = pose_to_json(pose);
      props["transforms"] = tr;
    }
    if (!props.empty()) jf["frame_properties"] = props;

    json fobjects = json::object();
    for (std::size_t i = 0; i < f.labels.size(); ++i) {
      const Box3D& box = f.labels[i];
      json o = {{"object_data", {{"cuboid", json::array({cuboid_json(box)})}}}};
      std::string key;
      if (box.track_id) {
        key = *box.track_id;
        auto existing = objects.find(key);
        if (existing == objects.end()) {
          objects[key] = {{"name", key}, {"type", std::string(to_string(box.category))}};
        } else if ((*existing)["type"] != std::string(to_string(box.category))) {
          o["type"] = std::string(to_string(box.category));
        }
      } else {
        key = std::string(kUntrackedPrefix) + std::to_string(f.index) + "_" + std::to_string(i);
        o["type"] = std::string(to_string(box.category));
      }
      fobjects[key] = o;
    }
    if (!fobjects.empty()) jf["objects"] = fobjects;
    frames[std::to_string(f.index)] = jf;
  }
  if (!objects.empty()) ol["objects"] = objects;
  ol["frames"] = frames;
  merge_into(ol, seq.extra);
  return json{{"openlabel", ol}};
}

std::string write_openlabel(const Sequence& seq, int indent) { return openlabel_json(seq).dump(indent); }

Sequence load_openlabel(const std::string& path, Diagnostics* diag) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path, "");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_openlabel(std::string_view(buf.str()), diag);
}

void save_openlabel(const std::string& path, const Sequence& seq) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << write_openlabel(seq) << '\n';
}

const Frame* find_frame(const Sequence& seq, std::int64_t index) {
  auto it = std::lower_bound(seq.frames.begin(), seq.frames.end(), index,
                             [](const Frame& f, std::int64_t i) { return f.index < i; });
  return it != seq.frames.end() && it->index == index ? &*it : nullptr;
}

Frame* find_frame(Sequence& seq, std::int64_t index) {
  return const_cast<Frame*>(find_frame(static_cast<const Sequence&>(seq), index));
}

// ---------------------------------------------------------------------------

namespace {

struct Comparator {
  double tol;
  std::string* why;

  bool note(const std::string& msg) const {
    if (why) *why = msg;
    return false;
  }
  bool num(double a, double b, const std::string& what) const {
    if (std::abs(a - b) <= tol) return true;
    return note(what + ": " + std::to_string(a) + " vs " + std::to_string(b));
  }
  bool vec(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const std::string& what) const {
    return num(a.x(), b.x(), what + ".x") && num(a.y(), b.y(), what + ".y") && num(a.z(), b.z(), what + ".z");
  }
  bool pose(const Pose& a, const Pose& b, const std::string& what) const {
    if (a.source_frame != b.source_frame || a.target_frame != b.target_frame) return note(what + ": frames differ");
    if (rotation_angle(a.rotation, b.rotation) > tol) return note(what + ": rotation differs");
    return vec(a.translation, b.translation, what + ".translation");
  }
  bool camera(const CameraCalibration& a, const CameraCalibration& b, const std::string& what) const {
    return num(a.intrinsics.fx, b.intrinsics.fx, what + ".fx") && num(a.intrinsics.fy, b.intrinsics.fy, what + ".fy") &&
           num(a.intrinsics.cx, b.intrinsics.cx, what + ".cx") && num(a.intrinsics.cy, b.intrinsics.cy, what + ".cy") &&
           num(a.distortion.k1, b.distortion.k1, what + ".k1") && num(a.distortion.k2, b.distortion.k2, what + ".k2") &&
           num(a.distortion.k3, b.distortion.k3, what + ".k3") && num(a.distortion.p1, b.distortion.p1, what + ".p1") &&
           num(a.distortion.p2, b.distortion.p2, what + ".p2") &&
           (a.width == b.width && a.height == b.height ? true : note(what + ": image size differs"));
  }
  bool box(const Box3D& a, const Box3D& b, const std::string& what) const {
    if (a.category != b.category) return note(what + ": category differs");
    if (a.track_id != b.track_id) return note(what + ": track id differs");
    if (a.frame_id != b.frame_id) return note(what + ": frame differs");
    if (a.score.has_value() != b.score.has_value()) return note(what + ": score presence differs");
    if (a.score && !num(*a.score, *b.score, what + ".score")) return false;
    if (a.attributes.size() != b.attributes.size()) return note(what + ": attribute count differs");
    for (const auto& [key, value] : a.attributes) {
      auto it = b.attributes.find(key);
      if (it == b.attributes.end() || it->second.index() != value.index()) return note(what + ": attribute " + key);
      if (const double* d = std::get_if<double>(&value)) {
        if (!num(*d, std::get<double>(it->second), what + "." + key)) return false;
      } else if (value != it->second) {
        return note(what + ": attribute " + key);
      }
    }
    return vec(a.center, b.center, what + ".center") && vec(a.dimensions, b.dimensions, what + ".dimensions") &&
           (std::abs(angle_difference(a.yaw, b.yaw)) <= tol ? true : note(what + ": yaw differs"));
  }
};

}  // namespace

bool approx_equal(const Sequence& a, const Sequence& b, double tolerance, std::string* why) {
  const Comparator cmp{tolerance, why};
  if (a.id != b.id) return cmp.note("sequence id differs");
  if (a.tags != b.tags) return cmp.note("tags differ");
  if (a.metadata_extra != b.metadata_extra) return cmp.note("metadata extras differ");
  if (a.extra != b.extra) return cmp.note("top-level extras differ");
  if (a.streams.size() != b.streams.size()) return cmp.note("stream count differs");
  for (const auto& [id, sa] : a.streams) {
    auto it = b.streams.find(id);
    if (it == b.streams.end()) return cmp.note("stream " + id + " missing");
    const StreamDescriptor& sb = it->second;
    if (sa.kind != sb.kind || sa.description != sb.description || sa.extra != sb.extra) {
      return cmp.note("stream " + id + " differs");
    }
    if (sa.camera.has_value() != sb.camera.has_value()) return cmp.note("stream " + id + " calibration presence");
    if (sa.camera && !cmp.camera(*sa.camera, *sb.camera, "stream " + id)) return false;
    if (sa.pose.has_value() != sb.pose.has_value()) return cmp.note("stream " + id + " pose presence");
    if (sa.pose && !cmp.pose(*sa.pose, *sb.pose, "stream " + id + " pose")) return false;
  }
  if (a.frames.size() != b.frames.size()) return cmp.note("frame count differs");
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    const Frame& fa = a.frames[i];
    const Frame& fb = b.frames[i];
    const std::string where = "frame " + std::to_string(fa.index);
    if (fa.index != fb.index) return cmp.note(where + ": index differs");
    if (fa.timestamps_us != fb.timestamps_us) return cmp.note(where + ": timestamps differ");
    if (fa.uris != fb.uris) return cmp.note(where + ": uris differ");
    if (fa.extra != fb.extra) return cmp.note(where + ": extras differ");
    if (fa.transforms.size() != fb.transforms.size()) return cmp.note(where + ": transform count differs");
    for (const auto& [name, pose] : fa.transforms) {
      auto it = fb.transforms.find(name);
      if (it == fb.transforms.end()) return cmp.note(where + ": transform " + name + " missing");
      if (!cmp.pose(pose, it->second, where + " transform " + name)) return false;
    }
    if (fa.labels.size() != fb.labels.size()) return cmp.note(where + ": label count differs");
    // label order is not part of the document; match by track id, then position
    std::vector<const Box3D*> lb;
    for (const auto& box : fb.labels) lb.push_back(&box);
    for (std::size_t j = 0; j < fa.labels.size(); ++j) {
      const Box3D& box = fa.labels[j];
      auto it = std::find_if(lb.begin(), lb.end(), [&](const Box3D* other) {
        if (!other) return false;
        if (box.track_id || other->track_id) return box.track_id == other->track_id;
        std::string ignored;
        Comparator quiet{tolerance, &ignored};
        return quiet.box(box, *other, "");
      });
      if (it == lb.end()) return cmp.note(where + ": no counterpart for label " + std::to_string(j));
      if (!cmp.box(box, **it, where + " label " + box.track_id.value_or(std::to_string(j)))) return false;
      *it = nullptr;
    }
  }
  return true;
}

}  // namespace v2x

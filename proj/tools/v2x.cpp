// v2x: command line front end for the toolkit.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
// Every subcommand writes a run manifest (resolved options, input digests,
// version, wall time) next to its output. Options can come from a TOML-style
// file given with --config ([subcommand] sections); flags win.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <csignal>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "png.hpp"
#include "v2x/bev_fusion.hpp"
#include "v2x/dataset.hpp"
#include "v2x/evaluation.hpp"
#include "v2x/kitti.hpp"
#include "v2x/openlabel.hpp"
#include "v2x/pcd.hpp"
#include "v2x/registration.hpp"
#include "v2x/service.hpp"
#include "v2x/sync.hpp"
#include "v2x/synth.hpp"
#include "v2x/tracking.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.3.0";

// --- logging --------------------------------------------------------------

enum class Level { Quiet = 0, Error = 1, Warn = 2, Info = 3, Debug = 4 };

Level log_level() {
  static const Level level = [] {
    const char* env = std::getenv("V2X_LOG_LEVEL");
    const std::string v = env ? env : "warn";
    if (v == "quiet") return Level::Quiet;
    if (v == "error") return Level::Error;
    if (v == "info") return Level::Info;
    if (v == "debug") return Level::Debug;
    return Level::Warn;
  }();
  return level;
}

void log(Level level, const std::string& message) {
  static const char* names[] = {"", "error", "warn", "info", "debug"};
  if (level <= log_level()) std::cerr << "v2x [" << names[static_cast<int>(level)] << "] " << message << "\n";
}

void log_warnings(const v2x::Diagnostics& diag) {
  for (const auto& w : diag.warnings) log(Level::Warn, w);
}

// --- files and digests ----------------------------------------------------

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw v2x::Error("cannot read " + p.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw v2x::Error("cannot write " + p.string());
  out << content;
}

void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw v2x::Error(p.string() + ": " + e.what());
  }
}

struct Fnv1a {
  std::uint64_t h = 0xcbf29ce484222325ull;
  void add(std::string_view bytes) {
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
  }
};

/// FNV-1a 64 of a file, or of every regular file below a directory (relative
/// path and contents, in path order).
std::string digest(const fs::path& p) {
  Fnv1a f;
  if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(p)) {
      if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& file : files) {
      f.add(fs::relative(file, p).generic_string());
      f.add(std::string_view("\0", 1));
      f.add(read_file(file));
    }
  } else {
    f.add(read_file(p));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(f.h));
  return buf;
}

std::string frame_name(std::int64_t index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06lld%s", static_cast<long long>(index), ext);
  return buf;
}

// --- run bookkeeping ------------------------------------------------------

struct Run {
  CLI::App* app = nullptr;
  std::vector<fs::path> inputs;
  fs::path manifest;
  json extra = json::object();
};

json resolved_options(const CLI::App& app) {
  json out = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_name(false, true);
    if (name.empty() || name == "--help" || name == "-h" || name == "--config") continue;
    const std::string key = opt->get_lnames().empty() ? name : opt->get_lnames().front();
    if (key == "help" || key == "config") continue;
    const auto& results = opt->results();
    if (!results.empty()) {
      out[key] = results.size() == 1 ? json(results.front()) : json(results);
    } else if (opt->get_type_size() == 0) {
      out[key] = false;
    } else {
      out[key] = opt->get_default_str();
    }
  }
  return out;
}

void write_manifest(const Run& run, double wall_time) {
  json inputs = json::array();
  for (const fs::path& p : run.inputs) {
    if (fs::exists(p)) inputs.push_back({{"path", p.generic_string()}, {"fnv1a64", digest(p)}});
  }
  json m{{"tool", "v2xkit"},
         {"version", kVersion},
         {"subcommand", run.app->get_name()},
         {"options", resolved_options(*run.app)},
         {"inputs", inputs},
         {"wall_time_s", wall_time}};
  for (auto it = run.extra.begin(); it != run.extra.end(); ++it) m[it.key()] = it.value();
  write_json(run.manifest, m);
}

fs::path manifest_for_file(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    double v = 0;
    try {
      v = std::stod(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != item.size()) throw CLI::ValidationError("'" + item + "' is not a number");
    out.push_back(v);
  }
  return out;
}

// --- scenes on disk -------------------------------------------------------

struct Scene {
  fs::path dir;
  v2x::Sequence seq;
};

Scene load_scene(const fs::path& dir) {
  v2x::Diagnostics diag;
  Scene s{dir, v2x::load_openlabel((dir / "sequence.json").string(), &diag)};
  log_warnings(diag);
  return s;
}

v2x::PointCloud scene_cloud(const Scene& s, const v2x::Frame& f, const std::string& stream) {
  auto it = f.uris.find(stream);
  if (it == f.uris.end()) throw v2x::Error("frame " + std::to_string(f.index) + " has no cloud for " + stream);
  v2x::PcdLoadInfo info;
  v2x::PointCloud c = v2x::load_point_cloud(s.dir / it->second, &info);
  if (info.dropped_nan) log(Level::Info, it->second + ": dropped " + std::to_string(info.dropped_nan) + " NaN rows");
  c.frame_id = stream;
  if (auto t = f.timestamps_us.find(stream); t != f.timestamps_us.end()) c.timestamp_us = t->second;
  return c;
}

json utm_json(const v2x::UtmPosition& u) {
  return {{"position", {u.position.x(), u.position.y(), u.position.z()}}, {"zone", u.zone}, {"northern", u.northern}};
}

v2x::UtmPosition utm_from(const json& j) {
  v2x::UtmPosition u;
  const auto p = j.at("position").get<std::vector<double>>();
  if (p.size() != 3) throw v2x::Error("UTM position needs 3 values");
  u.position << p[0], p[1], p[2];
  u.zone = j.at("zone").get<int>();
  u.northern = j.at("northern").get<bool>();
  return u;
}

v2x::FrameBoxes aligned_boxes(const v2x::Sequence& pred, const v2x::Sequence& gt) {
  std::vector<std::int64_t> indices;
  for (const auto& f : gt.frames) indices.push_back(f.index);
  for (const auto& f : pred.frames) indices.push_back(f.index);
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  v2x::FrameBoxes out;
  for (std::int64_t i : indices) {
    const v2x::Frame* f = v2x::find_frame(pred, i);
    out.push_back(f ? f->labels : std::vector<v2x::Box3D>{});
  }
  return out;
}

v2x::FrameBoxes gt_boxes(const v2x::Sequence& pred, const v2x::Sequence& gt) {
  std::vector<std::int64_t> indices;
  for (const auto& f : gt.frames) indices.push_back(f.index);
  for (const auto& f : pred.frames) indices.push_back(f.index);
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  v2x::FrameBoxes out;
  for (std::int64_t i : indices) {
    const v2x::Frame* f = v2x::find_frame(gt, i);
    out.push_back(f ? f->labels : std::vector<v2x::Box3D>{});
  }
  return out;
}

// --- BEV render -----------------------------------------------------------

void render_bev(const v2x::BEVGrid& grid, const std::vector<v2x::Box3D>& dets, const std::vector<v2x::Box3D>& gts,
                const fs::path& path) {
  const int nx = static_cast<int>(grid.count.rows());
  const int ny = static_cast<int>(grid.count.cols());
  v2x::cli::Image img(nx, ny, {0, 0, 0});
  const double top = std::log1p(std::max(1, grid.count.maxCoeff()));
  for (int ix = 0; ix < nx; ++ix) {
    for (int iy = 0; iy < ny; ++iy) {
      if (grid.count(ix, iy) == 0) continue;
      const auto v = static_cast<std::uint8_t>(60 + 195 * std::log1p(grid.count(ix, iy)) / top);
      img.set(ix, ny - 1 - iy, {v, v, v});
    }
  }
  auto draw = [&](const v2x::Box3D& b, v2x::cli::Rgb c) {
    const auto corners = v2x::box_corners(b);
    auto px = [&](int k) {
      const Eigen::Vector3d& p = corners[static_cast<std::size_t>(k)];
      return std::pair<int, int>{static_cast<int>(std::floor((p.x() - grid.config.x_range(0)) / grid.config.cell_size)),
                                 ny - 1 - static_cast<int>(std::floor((p.y() - grid.config.y_range(0)) / grid.config.cell_size))};
    };
    for (int k = 0; k < 4; ++k) {
      const auto [x0, y0] = px(k);
      const auto [x1, y1] = px((k + 1) % 4);
      img.line(x0, y0, x1, y1, c);
    }
  };
  for (const auto& b : gts) draw(b, {40, 200, 60});
  for (const auto& b : dets) draw(b, {230, 40, 40});
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  img.save_png(path);
}

// --- subcommands ----------------------------------------------------------

struct SynthOpts {
  std::uint64_t seed = 0;
  std::string out;
  int frames = 10;
  int objects = 12;
  bool occlusion = false;
  std::string encoding = "binary";
};

void cmd_synth(const SynthOpts& o, Run& run) {
  v2x::SynthSceneConfig cfg = o.occlusion ? v2x::occlusion_scene_config(o.seed) : v2x::SynthSceneConfig{};
  cfg.seed = o.seed;
  cfg.num_frames = o.frames;
  if (!o.occlusion) cfg.num_objects = o.objects;
  const v2x::SynthScene scene = v2x::synth_scene(cfg);
  const fs::path dir = o.out;
  fs::create_directories(dir / "vehicle");
  fs::create_directories(dir / "infra");
  const auto enc = o.encoding == "ascii" ? v2x::PcdEncoding::Ascii : v2x::PcdEncoding::Binary;
  for (std::size_t i = 0; i < scene.vehicle_frames.size(); ++i) {
    const auto& f = scene.ground_truth.frames[i];
    v2x::save_point_cloud(dir / f.uris.at(v2x::kVehicleStream), scene.vehicle_frames[i], enc);
    v2x::save_point_cloud(dir / f.uris.at(v2x::kInfraStream), scene.infra_frames[i], enc);
  }
  v2x::save_openlabel((dir / "sequence.json").string(), scene.ground_truth);
  json fixes = json::array();
  for (std::size_t i = 0; i < scene.gnss.size(); ++i) {
    const auto& g = scene.gnss[i];
    json fix = utm_json(g.position);
    fix["frame"] = scene.ground_truth.frames[i].index;
    fix["imu"] = {g.imu.x(), g.imu.y(), g.imu.z(), g.imu.w()};
    fixes.push_back(fix);
  }
  write_json(dir / "gnss.json", {{"reference", utm_json(scene.infra_utm)}, {"fixes", fixes}});
  std::size_t occluded = 0;
  for (const auto& v : scene.visibility.front()) occluded += v.vehicle_occluded ? 1 : 0;
  run.manifest = dir / "manifest.json";
  run.extra["outputs"] = {"sequence.json", "gnss.json", "vehicle/", "infra/"};
  log(Level::Info, "synth: " + std::to_string(scene.vehicle_frames.size()) + " frames, " +
                       std::to_string(scene.ground_truth.frames.front().labels.size()) + " objects, " +
                       std::to_string(occluded) + " hidden from the vehicle in frame 0");
}

struct RegisterOpts {
  std::string scene;
  std::string out;
  int stride = 10;
  int max_iterations = 50;
  double gate = 2.0;
  double eps = 1e-6;
  std::string refine = "1.0,0.5,0.25";
  double max_dt = 50.0;
  long subsample = 0;
  std::string vehicle_stream = v2x::kVehicleStream;
  std::string infra_stream = v2x::kInfraStream;
};

void cmd_register(const RegisterOpts& o, Run& run) {
  const Scene s = load_scene(o.scene);
  const fs::path out = o.out.empty() ? fs::path(o.scene) / "registration.json" : fs::path(o.out);
  run.inputs = {fs::path(o.scene) / "sequence.json"};

  std::vector<std::int64_t> tv;
  std::vector<std::int64_t> ti;
  std::vector<const v2x::Frame*> vf;
  std::vector<const v2x::Frame*> inf;
  for (const auto& f : s.seq.frames) {
    if (f.uris.count(o.vehicle_stream)) {
      tv.push_back(f.timestamps_us.count(o.vehicle_stream) ? f.timestamps_us.at(o.vehicle_stream) : f.index);
      vf.push_back(&f);
    }
    if (f.uris.count(o.infra_stream)) {
      ti.push_back(f.timestamps_us.count(o.infra_stream) ? f.timestamps_us.at(o.infra_stream) : f.index);
      inf.push_back(&f);
    }
  }
  const v2x::SyncResult sync = v2x::match_timestamps(tv, ti, o.max_dt);
  if (sync.pairs.empty()) throw v2x::Error("no vehicle frame has an infrastructure frame within max-dt");
  for (std::size_t r : sync.rejected) log(Level::Warn, "frame " + std::to_string(vf[r]->index) + " has no infrastructure match");

  std::vector<v2x::PointCloud> vclouds;
  std::vector<v2x::PointCloud> iclouds;
  for (const auto& p : sync.pairs) {
    vclouds.push_back(scene_cloud(s, *vf[p.vehicle_frame_index], o.vehicle_stream));
    iclouds.push_back(scene_cloud(s, *inf[p.infra_frame_index], o.infra_stream));
  }

  std::vector<v2x::Pose> coarse;
  const fs::path gnss_path = fs::path(o.scene) / "gnss.json";
  if (fs::exists(gnss_path)) {
    run.inputs.push_back(gnss_path);
    const json g = read_json(gnss_path);
    const v2x::UtmPosition ref = utm_from(g.at("reference"));
    std::map<std::int64_t, json> by_frame;
    for (const json& fix : g.at("fixes")) by_frame[fix.at("frame").get<std::int64_t>()] = fix;
    for (const auto& p : sync.pairs) {
      auto it = by_frame.find(vf[p.vehicle_frame_index]->index);
      if (it == by_frame.end()) throw v2x::Error("gnss.json has no fix for frame " + std::to_string(vf[p.vehicle_frame_index]->index));
      const auto q = it->second.at("imu").get<std::vector<double>>();
      if (q.size() != 4) throw v2x::Error("imu quaternion needs 4 values");
      v2x::Pose c = v2x::coarse_from_gnss_imu(ref, utm_from(it->second), Eigen::Quaterniond(q[3], q[0], q[1], q[2]).normalized());
      c.source_frame = o.vehicle_stream;
      c.target_frame = o.infra_stream;
      coarse.push_back(c);
    }
  } else {
    log(Level::Warn, "no gnss.json, starting ICP from the identity");
    coarse.push_back(v2x::Pose::identity(o.vehicle_stream, o.infra_stream));
  }

  v2x::IcpParams icp;
  icp.max_iterations = o.max_iterations;
  icp.correspondence_max_dist = o.gate;
  icp.convergence_eps = o.eps;
  if (o.subsample > 0) icp.subsample = o.subsample;
  const v2x::SequenceRegistration reg =
      v2x::register_sequence(vclouds, iclouds, coarse, o.stride, icp, parse_list(o.refine));

  json frames = json::array();
  std::size_t a = 0;
  for (std::size_t k = 0; k < sync.pairs.size(); ++k) {
    json f{{"frame", vf[sync.pairs[k].vehicle_frame_index]->index},
           {"infra_frame", inf[sync.pairs[k].infra_frame_index]->index},
           {"delta_t_ms", sync.pairs[k].delta_t_ms},
           {"anchor", static_cast<bool>(reg.is_anchor[k])},
           {"pose", v2x::pose_to_json(reg.poses[k])}};
    if (reg.is_anchor[k]) {
      const auto& r = reg.anchors[a++];
      f["rmse"] = r.rmse;
      f["iterations"] = r.iterations;
      f["converged"] = r.converged;
      f["inliers"] = r.inliers;
    }
    frames.push_back(f);
  }
  json rejected = json::array();
  for (std::size_t r : sync.rejected) rejected.push_back(vf[r]->index);
  write_json(out, {{"vehicle_stream", o.vehicle_stream},
                   {"infra_stream", o.infra_stream},
                   {"mean_abs_delta_ms", sync.mean_abs_delta_ms},
                   {"rejected", rejected},
                   {"frames", frames}});
  run.manifest = manifest_for_file(out);
}

struct Registration {
  std::map<std::int64_t, std::pair<std::int64_t, v2x::Pose>> frames;  ///< vehicle frame -> (infra frame, pose)
};

Registration load_registration(const fs::path& p) {
  const json j = read_json(p);
  Registration r;
  for (const json& f : j.at("frames")) {
    r.frames[f.at("frame").get<std::int64_t>()] = {f.at("infra_frame").get<std::int64_t>(), v2x::pose_from_json(f.at("pose"))};
  }
  return r;
}

struct DetectOpts {
  std::string scene;
  std::string poses;
  std::string mode = "cooperative";
  std::string out;
  double cell_size = 150.0 / 512.0;
  double range = 75.0;
  std::optional<double> z_min;
  double z_max = 0.0;
  std::optional<double> ground_z;
  int min_points = 1;
  int min_cells = 2;
  double merge_dist = 1.0;
  std::string render;
  long render_frame = 0;
  std::string vehicle_stream = v2x::kVehicleStream;
  std::string infra_stream = v2x::kInfraStream;
};

void cmd_detect(const DetectOpts& o, Run& run) {
  static const std::vector<std::string> modes{"cooperative", "vehicle", "infra", "late"};
  if (std::find(modes.begin(), modes.end(), o.mode) == modes.end()) throw CLI::ValidationError("--mode", "unknown mode " + o.mode);
  const Scene s = load_scene(o.scene);
  run.inputs = {fs::path(o.scene)};
  const fs::path out = o.out.empty() ? fs::path(o.scene) / ("detections_" + o.mode + ".json") : fs::path(o.out);

  v2x::GridConfig grid;
  grid.x_range = {-o.range, o.range};
  grid.y_range = {-o.range, o.range};
  grid.cell_size = o.cell_size;
  v2x::DetectorParams params;
  params.min_points = o.min_points;
  params.min_cells = o.min_cells;
  std::optional<double> ground = o.ground_z;
  if (!ground && s.seq.tags.count("ground_z")) ground = std::stod(s.seq.tags.at("ground_z"));
  params.ground_z = ground;
  // ground returns sit within a few centimetres of the ground plane
  grid.z_range = {o.z_min.value_or(ground ? *ground + 0.3 : -8.0), o.z_max};
  v2x::validate(grid);

  Registration reg;
  if (o.mode != "infra") {
    const fs::path pp = o.poses.empty() ? fs::path(o.scene) / "registration.json" : fs::path(o.poses);
    run.inputs.push_back(pp);
    reg = load_registration(pp);
  }

  v2x::Sequence outseq;
  outseq.id = s.seq.id + "-" + o.mode;
  outseq.streams[o.infra_stream] = s.seq.streams.count(o.infra_stream) ? s.seq.streams.at(o.infra_stream) : v2x::StreamDescriptor{};
  outseq.tags = {{"detector", "v2x clusters"}, {"mode", o.mode}};
  std::size_t total = 0;
  Eigen::Index vehicle_dropped = 0;
  for (const v2x::Frame& f : s.seq.frames) {
    v2x::Frame of;
    of.index = f.index;
    if (f.timestamps_us.count(o.infra_stream)) of.timestamps_us[o.infra_stream] = f.timestamps_us.at(o.infra_stream);

    std::vector<v2x::Detection> dets;
    v2x::BEVGrid rendered;
    const v2x::Frame* infra_frame = &f;
    std::optional<v2x::Pose> t_vi;
    if (o.mode != "infra") {
      auto it = reg.frames.find(f.index);
      if (it == reg.frames.end()) {
        log(Level::Warn, "frame " + std::to_string(f.index) + " has no registered pose, skipped");
        continue;
      }
      infra_frame = v2x::find_frame(s.seq, it->second.first);
      if (!infra_frame) throw v2x::Error("registration refers to missing frame " + std::to_string(it->second.first));
      t_vi = it->second.second;
    }
    if (o.mode == "cooperative") {
      const v2x::FusionResult r = v2x::cooperative_detect(scene_cloud(s, f, o.vehicle_stream),
                                                          scene_cloud(s, *infra_frame, o.infra_stream), *t_vi, grid, params);
      dets = r.detections;
      vehicle_dropped += r.vehicle_dropped;
      rendered = r.grid;
    } else if (o.mode == "vehicle") {
      dets = v2x::single_source_detect(scene_cloud(s, f, o.vehicle_stream), *t_vi, v2x::DetectionSource::Vehicle, grid, params);
    } else if (o.mode == "infra") {
      dets = v2x::single_source_detect(scene_cloud(s, f, o.infra_stream), v2x::Pose::identity(o.infra_stream, o.infra_stream),
                                       v2x::DetectionSource::Infra, grid, params);
    } else {
      const auto dv = v2x::single_source_detect(scene_cloud(s, f, o.vehicle_stream), *t_vi, v2x::DetectionSource::Vehicle, grid, params);
      const auto di = v2x::single_source_detect(scene_cloud(s, *infra_frame, o.infra_stream),
                                                v2x::Pose::identity(o.infra_stream, o.infra_stream), v2x::DetectionSource::Infra,
                                                grid, params);
      dets = v2x::late_fuse(dv, di, o.merge_dist);
    }
    for (const auto& d : dets) {
      v2x::Box3D b = d.box;
      b.frame_id = o.infra_stream;
      of.labels.push_back(std::move(b));
    }
    total += of.labels.size();

    if (!o.render.empty() && f.index == o.render_frame) {
      if (rendered.count.size() == 0) {
        v2x::PointCloud c = o.mode == "infra" ? scene_cloud(s, f, o.infra_stream)
                                              : v2x::transform_points(scene_cloud(s, f, o.vehicle_stream), *t_vi);
        c.frame_id = o.infra_stream;
        rendered = v2x::pillarize(c, grid);
      }
      render_bev(rendered, of.labels, f.labels, o.render);
    }
    outseq.frames.push_back(std::move(of));
  }
  v2x::save_openlabel(out.string(), outseq);
  run.manifest = manifest_for_file(out);
  run.extra["detections"] = total;
  if (o.mode == "cooperative") run.extra["vehicle_points_outside_grid"] = vehicle_dropped;
  log(Level::Info, "detect: " + std::to_string(total) + " boxes over " + std::to_string(outseq.frames.size()) + " frames");
}

struct TrackOpts {
  std::string detections;
  std::string out;
  double gate = 5.0;
  int max_age = 3;
  int min_hits = 2;
  double process_noise = 1.0;
  double measurement_noise = 1.0;
  bool class_agnostic = false;
};

void cmd_track(const TrackOpts& o, Run& run) {
  v2x::Diagnostics diag;
  const v2x::Sequence in = v2x::load_openlabel(o.detections, &diag);
  log_warnings(diag);
  run.inputs = {o.detections};
  v2x::TrackerParams p;
  p.gate_dist = o.gate;
  p.max_age = o.max_age;
  p.min_hits = o.min_hits;
  p.process_noise = o.process_noise;
  p.measurement_noise = o.measurement_noise;
  p.category_aware = !o.class_agnostic;
  std::vector<std::vector<v2x::Box3D>> dets;
  for (const auto& f : in.frames) dets.push_back(f.labels);
  const auto tracks = v2x::track_sequence(dets, p);
  v2x::Sequence out = in;
  out.id = in.id + "-tracks";
  out.tags["tracker"] = "sort3d";
  std::set<std::string> ids;
  for (std::size_t i = 0; i < out.frames.size(); ++i) {
    out.frames[i].labels = tracks[i];
    for (const auto& b : tracks[i]) ids.insert(*b.track_id);
  }
  v2x::save_openlabel(o.out, out);
  run.manifest = manifest_for_file(o.out);
  run.extra["tracks"] = ids.size();
}

struct EvalDetOpts {
  std::string pred;
  std::string gt;
  std::string out;
  std::string mode = "bev";
  std::string thresholds;
  std::vector<std::string> classes;
};

void cmd_eval_detection(const EvalDetOpts& o, Run& run) {
  v2x::Diagnostics diag;
  const v2x::Sequence pred = v2x::load_openlabel(o.pred, &diag);
  const v2x::Sequence gt = v2x::load_openlabel(o.gt, &diag);
  log_warnings(diag);
  run.inputs = {o.pred, o.gt};
  v2x::DetectionEvalConfig cfg;
  if (!o.thresholds.empty()) {
    (o.mode == "3d" ? cfg.iou_thresholds : cfg.distance_thresholds) = parse_list(o.thresholds);
  }
  if (!o.classes.empty()) {
    cfg.classes.clear();
    for (const auto& c : o.classes) cfg.classes.push_back(v2x::category_from_string(c));
  }
  v2x::validate(cfg);
  const auto preds = aligned_boxes(pred, gt);
  const auto gts = gt_boxes(pred, gt);
  json report;
  if (o.mode == "bev") {
    const auto r = v2x::evaluate_detection_bev(preds, gts, cfg);
    report = v2x::to_json(r);
    log(Level::Info, "mAP " + std::to_string(r.map));
  } else if (o.mode == "3d") {
    report = v2x::to_json(v2x::evaluate_detection_3d(preds, gts, cfg));
  } else {
    throw CLI::ValidationError("--mode", "expected bev or 3d");
  }
  report["mode"] = o.mode;
  report["config"] = v2x::to_json(cfg);
  write_json(o.out, report);
  run.manifest = manifest_for_file(o.out);
}

struct EvalTrackOpts {
  std::string pred;
  std::string gt;
  std::string out;
  double match_dist = 2.0;
};

void cmd_eval_tracking(const EvalTrackOpts& o, Run& run) {
  v2x::Diagnostics diag;
  const v2x::Sequence pred = v2x::load_openlabel(o.pred, &diag);
  const v2x::Sequence gt = v2x::load_openlabel(o.gt, &diag);
  log_warnings(diag);
  run.inputs = {o.pred, o.gt};
  json report = v2x::to_json(v2x::evaluate_tracking(aligned_boxes(pred, gt), gt_boxes(pred, gt), o.match_dist));
  report["match_dist_m"] = o.match_dist;
  write_json(o.out, report);
  run.manifest = manifest_for_file(o.out);
}

struct ConvertOpts {
  std::string in;
  std::string to;
  std::string out;
};

void cmd_convert(const ConvertOpts& o, Run& run) {
  v2x::Diagnostics diag;
  run.inputs = {o.in};
  if (o.to == "kitti") {
    const v2x::Sequence seq = v2x::load_openlabel(o.in, &diag);
    const auto records = v2x::to_kitti(seq, &diag);
    fs::create_directories(o.out);
    for (std::size_t i = 0; i < records.size(); ++i) write_file(fs::path(o.out) / frame_name(seq.frames[i].index, ".txt"), records[i]);
    run.manifest = fs::path(o.out) / "manifest.json";
  } else if (o.to == "openlabel") {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(o.in)) {
      if (e.path().extension() == ".txt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<std::string> records;
    for (const auto& f : files) records.push_back(read_file(f));
    v2x::Sequence seq = v2x::from_kitti(records, &diag);
    seq.id = fs::path(o.in).filename().string();
    v2x::save_openlabel(o.out, seq);
    run.manifest = manifest_for_file(o.out);
  } else {
    throw CLI::ValidationError("--to", "expected kitti or openlabel");
  }
  log_warnings(diag);
  run.extra["warnings"] = diag.warnings.size();
}

struct SplitOpts {
  std::vector<std::string> in;
  std::string out;
  std::string level = "frame";
  std::string ratios = "0.8,0.1,0.1";
  double tolerance = 0.02;
  std::uint64_t seed = 0;
};

void cmd_split(const SplitOpts& o, Run& run) {
  v2x::SplitParams p;
  const auto r = parse_list(o.ratios);
  if (r.size() != 3) throw CLI::ValidationError("--ratios", "needs three values");
  p.ratios = {r[0], r[1], r[2]};
  p.tolerance = o.tolerance;
  p.seed = o.seed;
  std::vector<v2x::Sequence> seqs;
  v2x::Diagnostics diag;
  for (const auto& f : o.in) {
    seqs.push_back(v2x::load_openlabel(f, &diag));
    run.inputs.push_back(f);
  }
  log_warnings(diag);
  v2x::SplitAssignment a;
  if (o.level == "frame") {
    if (seqs.size() != 1) throw CLI::ValidationError("--in", "frame-level splitting takes one sequence");
    a = v2x::stratified_split(seqs.front(), p);
  } else if (o.level == "sequence") {
    a = v2x::stratified_split(seqs, p);
  } else {
    throw CLI::ValidationError("--level", "expected frame or sequence");
  }
  for (const auto& n : a.notices) log(Level::Warn, n);
  json j = v2x::to_json(a);
  j["level"] = o.level;
  write_json(o.out, j);
  run.manifest = manifest_for_file(o.out);
}

struct StatsOpts {
  std::string in;
  std::string out;
  std::string csv;
  std::string plots;
};

void cmd_stats(const StatsOpts& o, Run& run) {
  v2x::Diagnostics diag;
  const v2x::Sequence seq = v2x::load_openlabel(o.in, &diag);
  log_warnings(diag);
  run.inputs = {o.in};
  const v2x::DatasetStats st = v2x::compute_stats(seq);
  write_json(o.out, v2x::to_json(st));
  if (!o.csv.empty()) write_file(o.csv, v2x::stats_csv(st));
  if (!o.plots.empty()) {
    fs::create_directories(o.plots);
    std::vector<double> classes;
    for (v2x::Category c : v2x::kAllCategories) classes.push_back(st.class_counts.count(c) ? static_cast<double>(st.class_counts.at(c)) : 0.0);
    v2x::cli::bar_chart(classes).save_png(fs::path(o.plots) / "class_counts.png");
    std::vector<double> pts(st.points_histogram.begin(), st.points_histogram.end());
    v2x::cli::bar_chart(pts).save_png(fs::path(o.plots) / "points_in_box.png");
    std::vector<double> per_frame;
    for (const auto& [n, frames] : st.objects_per_frame) {
      if (per_frame.size() <= n) per_frame.resize(n + 1, 0.0);
      per_frame[n] = static_cast<double>(frames);
    }
    v2x::cli::bar_chart(per_frame).save_png(fs::path(o.plots) / "objects_per_frame.png");
    std::vector<double> rose(st.yaw_rose.begin(), st.yaw_rose.end());
    v2x::cli::bar_chart(rose).save_png(fs::path(o.plots) / "yaw_rose.png");
  }
  run.manifest = manifest_for_file(o.out);
}

struct ServeOpts {
  std::string data_dir;
  std::string host = "127.0.0.1";
  int port = 8080;
  long chunk_points = 65536;
};

v2x::AnnotationServer* g_server = nullptr;

void cmd_serve(const ServeOpts& o, Run& run, double started) {
  v2x::ServiceOptions so;
  so.data_dir = o.data_dir;
  so.chunk_points = o.chunk_points;
  v2x::AnnotationServer server(so);
  run.manifest = fs::path(o.data_dir) / "serve.manifest.json";
  write_manifest(run, started);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  log(Level::Info, "serving " + o.data_dir + " on " + o.host + ":" + std::to_string(o.port));
  server.run(o.host, o.port);
  g_server = nullptr;
}

}  // namespace

int main(int argc, char** argv) {
  const auto t0 = std::chrono::steady_clock::now();
  CLI::App app{"v2x cooperative perception toolkit"};
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "TOML-style options file; [subcommand] sections, flags win");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  Run run;

  SynthOpts synth;
  auto* s = app.add_subcommand("synth", "generate a seeded synthetic V2X scene (OpenLABEL + PCD)");
  s->add_option("--seed", synth.seed, "random seed");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--frames", synth.frames, "number of frames")->check(CLI::PositiveNumber);
  s->add_option("--objects", synth.objects, "random road users")->check(CLI::NonNegativeNumber);
  s->add_flag("--occlusion", synth.occlusion, "place a truck hiding one object from the ego car");
  s->add_option("--encoding", synth.encoding, "PCD encoding")->check(CLI::IsMember({"binary", "ascii"}));

  RegisterOpts reg;
  auto* r = app.add_subcommand("register", "vehicle -> infrastructure registration (GNSS/IMU coarse + ICP)");
  r->add_option("--scene", reg.scene, "scene directory with sequence.json")->required()->check(CLI::ExistingDirectory);
  r->add_option("--out", reg.out, "output JSON (default <scene>/registration.json)");
  r->add_option("--stride", reg.stride, "anchor stride")->check(CLI::PositiveNumber);
  r->add_option("--max-iterations", reg.max_iterations, "ICP iteration cap")->check(CLI::PositiveNumber);
  r->add_option("--gate", reg.gate, "first ICP correspondence gate (m)")->check(CLI::PositiveNumber);
  r->add_option("--eps", reg.eps, "ICP convergence threshold on the RMSE change (m)")->check(CLI::PositiveNumber);
  r->add_option("--refine", reg.refine, "comma separated gates of the refinement passes, empty for none");
  r->add_option("--max-dt", reg.max_dt, "timestamp matching limit (ms)")->check(CLI::PositiveNumber);
  r->add_option("--subsample", reg.subsample, "source point budget, 0 for all")->check(CLI::NonNegativeNumber);
  r->add_option("--vehicle-stream", reg.vehicle_stream);
  r->add_option("--infra-stream", reg.infra_stream);

  DetectOpts det;
  auto* d = app.add_subcommand("detect", "BEV clustering detection (cooperative, single view or late fusion)");
  d->add_option("--scene", det.scene, "scene directory")->required()->check(CLI::ExistingDirectory);
  d->add_option("--poses", det.poses, "registration JSON (default <scene>/registration.json)");
  d->add_option("--mode", det.mode, "cooperative | vehicle | infra | late")
      ->check(CLI::IsMember({"cooperative", "vehicle", "infra", "late"}));
  d->add_option("--out", det.out, "output OpenLABEL (default <scene>/detections_<mode>.json)");
  d->add_option("--cell-size", det.cell_size, "grid cell (m)")->check(CLI::PositiveNumber);
  d->add_option("--range", det.range, "grid half extent in x and y (m)")->check(CLI::PositiveNumber);
  d->add_option("--z-min", det.z_min, "lower z bound (default ground + 0.3 m, or -8)");
  d->add_option("--z-max", det.z_max, "upper z bound");
  d->add_option("--ground-z", det.ground_z, "ground height for box bottoms (default from the sequence tags)");
  d->add_option("--min-points", det.min_points, "points for a cell to count as occupied")->check(CLI::PositiveNumber);
  d->add_option("--min-cells", det.min_cells, "cells per cluster")->check(CLI::PositiveNumber);
  d->add_option("--merge-dist", det.merge_dist, "late fusion merge distance (m)")->check(CLI::PositiveNumber);
  d->add_option("--render", det.render, "write a BEV PNG of --render-frame");
  d->add_option("--render-frame", det.render_frame, "frame index to render");
  d->add_option("--vehicle-stream", det.vehicle_stream);
  d->add_option("--infra-stream", det.infra_stream);

  TrackOpts trk;
  auto* t = app.add_subcommand("track", "SORT-style 3D tracking of per-frame detections");
  t->add_option("--detections", trk.detections, "detections OpenLABEL")->required()->check(CLI::ExistingFile);
  t->add_option("--out", trk.out, "output OpenLABEL with track ids")->required();
  t->add_option("--gate", trk.gate, "association gate (m)")->check(CLI::PositiveNumber);
  t->add_option("--max-age", trk.max_age, "frames a track survives without updates")->check(CLI::NonNegativeNumber);
  t->add_option("--min-hits", trk.min_hits, "updates before a track is reported")->check(CLI::PositiveNumber);
  t->add_option("--process-noise", trk.process_noise)->check(CLI::PositiveNumber);
  t->add_option("--measurement-noise", trk.measurement_noise)->check(CLI::PositiveNumber);
  t->add_flag("--class-agnostic", trk.class_agnostic, "associate across categories");

  EvalDetOpts ed;
  auto* e1 = app.add_subcommand("eval-detection", "center-distance (bev) or 3D-IoU (3d) mAP");
  e1->add_option("--pred", ed.pred, "predictions OpenLABEL")->required()->check(CLI::ExistingFile);
  e1->add_option("--gt", ed.gt, "ground truth OpenLABEL")->required()->check(CLI::ExistingFile);
  e1->add_option("--out", ed.out, "report JSON")->required();
  e1->add_option("--mode", ed.mode)->check(CLI::IsMember({"bev", "3d"}));
  e1->add_option("--thresholds", ed.thresholds, "comma separated distances (bev) or IoUs (3d)");
  e1->add_option("--classes", ed.classes, "categories to evaluate");

  EvalTrackOpts et;
  auto* e2 = app.add_subcommand("eval-tracking", "CLEAR-MOT, identity and coverage metrics");
  e2->add_option("--pred", et.pred, "tracks OpenLABEL")->required()->check(CLI::ExistingFile);
  e2->add_option("--gt", et.gt, "ground truth OpenLABEL")->required()->check(CLI::ExistingFile);
  e2->add_option("--out", et.out, "report JSON")->required();
  e2->add_option("--match-dist", et.match_dist, "match gate (m)")->check(CLI::PositiveNumber);

  ConvertOpts cv;
  auto* c = app.add_subcommand("convert", "OpenLABEL <-> KITTI-style text");
  c->add_option("--in", cv.in, "OpenLABEL file, or directory of KITTI .txt files")->required()->check(CLI::ExistingPath);
  c->add_option("--to", cv.to, "kitti | openlabel")->required()->check(CLI::IsMember({"kitti", "openlabel"}));
  c->add_option("--out", cv.out, "output directory (kitti) or file (openlabel)")->required();

  SplitOpts sp;
  auto* sc = app.add_subcommand("split", "stratified train/val/test split");
  sc->add_option("--in", sp.in, "OpenLABEL file(s)")->required()->check(CLI::ExistingFile);
  sc->add_option("--out", sp.out, "assignment JSON")->required();
  sc->add_option("--level", sp.level, "frame | sequence")->check(CLI::IsMember({"frame", "sequence"}));
  sc->add_option("--ratios", sp.ratios, "train,val,test");
  sc->add_option("--tolerance", sp.tolerance, "allowed class proportion deviation")->check(CLI::PositiveNumber);
  sc->add_option("--seed", sp.seed);

  StatsOpts st;
  auto* so = app.add_subcommand("stats", "label statistics");
  so->add_option("--in", st.in, "OpenLABEL file")->required()->check(CLI::ExistingFile);
  so->add_option("--out", st.out, "stats JSON")->required();
  so->add_option("--csv", st.csv, "also write CSV");
  so->add_option("--plots", st.plots, "directory for histogram PNGs");

  ServeOpts sv;
  auto* se = app.add_subcommand("serve", "annotation HTTP service (/v1)");
  se->add_option("--data-dir", sv.data_dir, "directory of sequence directories")->required()->check(CLI::ExistingDirectory);
  se->add_option("--host", sv.host);
  se->add_option("--port", sv.port)->check(CLI::Range(0, 65535));
  se->add_option("--chunk-points", sv.chunk_points, "points per cloud chunk")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }

  try {
    run.app = app.get_subcommands().front();
    const std::string name = run.app->get_name();
    const auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
    if (name == "synth") cmd_synth(synth, run);
    else if (name == "register") cmd_register(reg, run);
    else if (name == "detect") cmd_detect(det, run);
    else if (name == "track") cmd_track(trk, run);
    else if (name == "eval-detection") cmd_eval_detection(ed, run);
    else if (name == "eval-tracking") cmd_eval_tracking(et, run);
    else if (name == "convert") cmd_convert(cv, run);
    else if (name == "split") cmd_split(sp, run);
    else if (name == "stats") cmd_stats(st, run);
    else if (name == "serve") {
      cmd_serve(sv, run, elapsed());
      return 0;
    }
    write_manifest(run, elapsed());
    return 0;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << run.app->help();
    return 1;
  } catch (const v2x::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "error: malformed input: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}

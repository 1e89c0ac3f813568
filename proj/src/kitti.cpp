#include "v2x/kitti.hpp"

#include <charconv>
#include <sstream>

namespace v2x {

std::string kitti_class(Category c) {
  switch (c) {
    case Category::Car: return "Car";
    case Category::Truck: return "Truck";
    case Category::Trailer: return "Trailer";
    case Category::Van: return "Van";
    case Category::Motorcycle: return "Motorcycle";
    case Category::Bus: return "Bus";
    case Category::Pedestrian: return "Pedestrian";
    case Category::Bicycle: return "Cyclist";
    case Category::Other: return "Misc";
  }
  return "Misc";
}

std::optional<Category> category_from_kitti(const std::string& name) {
  if (name == "DontCare") return std::nullopt;
  if (name == "Cyclist") return Category::Bicycle;
  if (name == "Person_sitting") return Category::Pedestrian;
  if (name == "Misc" || name == "Tram") return Category::Other;
  return category_from_string(name);
}

namespace {

void put(std::string& line, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  line.push_back(' ');
  line.append(buf, res.ptr);
}

double field(const std::vector<std::string>& tok, std::size_t i, std::size_t frame, std::size_t line) {
  const std::string& s = tok[i];
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw KittiError("frame " + std::to_string(frame) + " line " + std::to_string(line) + ": field " +
                         std::to_string(i + 1) + " ('" + s + "') is not a number",
                     frame, line);
  }
  return v;
}

}  // namespace

std::vector<std::string> to_kitti(const Sequence& seq, Diagnostics* diag) {
  std::vector<std::string> out;
  out.reserve(seq.frames.size());
  bool lossy = false;
  for (const Frame& f : seq.frames) {
    std::string text;
    for (const Box3D& b : f.labels) {
      if (b.track_id || !b.attributes.empty()) lossy = true;
      std::string line = kitti_class(b.category) + " 0 0 -10 0 0 0 0";
      put(line, b.height());
      put(line, b.width());
      put(line, b.length());
      put(line, b.center.x());
      put(line, b.center.y());
      put(line, b.center.z());
      put(line, b.yaw);
      if (b.score) put(line, *b.score);
      text += line;
      text += '\n';
    }
    out.push_back(std::move(text));
  }
  if (lossy) warn(diag, "KITTI export drops track ids and attributes");
  return out;
}

Sequence from_kitti(const std::vector<std::string>& records, Diagnostics* diag) {
  Sequence seq;
  for (std::size_t fi = 0; fi < records.size(); ++fi) {
    Frame frame;
    frame.index = static_cast<std::int64_t>(fi);
    std::istringstream in(records[fi]);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
      ++line_no;
      std::istringstream ls(raw);
      std::vector<std::string> tok;
      for (std::string t; ls >> t;) tok.push_back(t);
      if (tok.empty()) continue;
      if (tok.size() != 15 && tok.size() != 16) {
        throw KittiError("frame " + std::to_string(fi) + " line " + std::to_string(line_no) + ": expected 15 or 16 fields, got " +
                             std::to_string(tok.size()),
                         fi, line_no);
      }
      for (std::size_t i = 1; i < tok.size(); ++i) field(tok, i, fi, line_no);
      const auto category = category_from_kitti(tok[0]);
      if (!category) {
        warn(diag, "frame " + std::to_string(fi) + " line " + std::to_string(line_no) + ": DontCare skipped");
        continue;
      }
      Box3D b;
      b.category = *category;
      b.dimensions = Eigen::Vector3d(field(tok, 10, fi, line_no), field(tok, 9, fi, line_no), field(tok, 8, fi, line_no));
      b.center = Eigen::Vector3d(field(tok, 11, fi, line_no), field(tok, 12, fi, line_no), field(tok, 13, fi, line_no));
      b.yaw = normalize_angle(field(tok, 14, fi, line_no));
      if (tok.size() == 16) b.score = field(tok, 15, fi, line_no);
      try {
        validate(b);
      } catch (const InvalidBox& e) {
        throw KittiError("frame " + std::to_string(fi) + " line " + std::to_string(line_no) + ": " + e.what(), fi, line_no);
      }
      frame.labels.push_back(std::move(b));
    }
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

}  // namespace v2x

#include "v2x/pcd.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace v2x {

namespace {

struct Field {
  std::string name;
  int size = 4;
  char type = 'F';
  int count = 1;
  std::size_t offset = 0;  ///< byte offset in a binary row
  std::size_t column = 0;  ///< value index in an ascii row
};

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

double read_binary(const char* p, const Field& f) {
  switch (f.type) {
    case 'F':
      if (f.size == 4) { float v; std::memcpy(&v, p, 4); return v; }
      if (f.size == 8) { double v; std::memcpy(&v, p, 8); return v; }
      break;
    case 'U':
      if (f.size == 1) { std::uint8_t v; std::memcpy(&v, p, 1); return v; }
      if (f.size == 2) { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
      if (f.size == 4) { std::uint32_t v; std::memcpy(&v, p, 4); return v; }
      if (f.size == 8) { std::uint64_t v; std::memcpy(&v, p, 8); return static_cast<double>(v); }
      break;
    case 'I':
      if (f.size == 1) { std::int8_t v; std::memcpy(&v, p, 1); return v; }
      if (f.size == 2) { std::int16_t v; std::memcpy(&v, p, 2); return v; }
      if (f.size == 4) { std::int32_t v; std::memcpy(&v, p, 4); return v; }
      if (f.size == 8) { std::int64_t v; std::memcpy(&v, p, 8); return static_cast<double>(v); }
      break;
  }
  throw PcdError("unsupported PCD field type " + std::string(1, f.type) + std::to_string(f.size));
}

double parse_number(const std::string& tok) {
  if (tok == "nan" || tok == "NaN" || tok == "-nan") return std::nan("");
  try {
    std::size_t pos = 0;
    const double v = std::stod(tok, &pos);
    if (pos != tok.size()) throw PcdError("bad number '" + tok + "'");
    return v;
  } catch (const std::invalid_argument&) {
    throw PcdError("bad number '" + tok + "'");
  } catch (const std::out_of_range&) {
    throw PcdError("number out of range '" + tok + "'");
  }
}

}  // namespace

PointCloud parse_pcd(std::string_view bytes, PcdLoadInfo* info) {
  std::vector<Field> fields;
  std::size_t points = 0;
  bool have_points = false;
  std::size_t width = 0;
  std::size_t height = 1;
  std::string data_kind;

  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t eol = bytes.find('\n', pos);
    std::string line(bytes.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos));
    pos = eol == std::string_view::npos ? bytes.size() : eol + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    const std::string& key = tok[0];
    if (key == "FIELDS") {
      fields.clear();
      for (std::size_t i = 1; i < tok.size(); ++i) fields.push_back(Field{tok[i]});
    } else if (key == "SIZE" || key == "TYPE" || key == "COUNT") {
      if (tok.size() != fields.size() + 1) throw PcdError(key + " does not match FIELDS");
      for (std::size_t i = 0; i < fields.size(); ++i) {
        if (key == "SIZE") fields[i].size = std::stoi(tok[i + 1]);
        else if (key == "TYPE") fields[i].type = tok[i + 1].at(0);
        else fields[i].count = std::stoi(tok[i + 1]);
      }
    } else if (key == "WIDTH") {
      width = std::stoull(tok.at(1));
    } else if (key == "HEIGHT") {
      height = std::stoull(tok.at(1));
    } else if (key == "POINTS") {
      points = std::stoull(tok.at(1));
      have_points = true;
    } else if (key == "DATA") {
      data_kind = tok.at(1);
      break;
    }
  }
  if (data_kind.empty()) throw PcdError("PCD header has no DATA line");
  if (!have_points) points = width * height;

  std::size_t offset = 0;
  std::size_t column = 0;
  int ix = -1, iy = -1, iz = -1, ii = -1;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    Field& f = fields[i];
    if (f.count < 1 || f.size < 1) throw PcdError("bad SIZE/COUNT for field " + f.name);
    f.offset = offset;
    f.column = column;
    offset += static_cast<std::size_t>(f.size * f.count);
    column += static_cast<std::size_t>(f.count);
    if (f.name == "x") ix = static_cast<int>(i);
    else if (f.name == "y") iy = static_cast<int>(i);
    else if (f.name == "z") iz = static_cast<int>(i);
    else if ((f.name == "intensity" || f.name == "i") && f.count == 1) ii = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0) throw PcdError("unsupported field layout: x, y and z are required");
  for (int idx : {ix, iy, iz}) {
    const Field& f = fields[static_cast<std::size_t>(idx)];
    if (f.type != 'F' || f.count != 1 || (f.size != 4 && f.size != 8)) {
      throw PcdError("unsupported field layout: " + f.name + " must be a single F4 or F8 value");
    }
  }

  std::vector<Eigen::Vector4d> rows;
  rows.reserve(points);
  PcdLoadInfo local;
  local.points_in_file = points;
  auto keep = [&](double x, double y, double z, double in) {
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
      ++local.dropped_nan;
      return;
    }
    rows.emplace_back(x, y, z, in);
  };

  if (data_kind == "ascii") {
    local.encoding = PcdEncoding::Ascii;
    std::size_t read = 0;
    while (pos < bytes.size() && read < points) {
      const std::size_t eol = bytes.find('\n', pos);
      std::string line(bytes.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos));
      pos = eol == std::string_view::npos ? bytes.size() : eol + 1;
      const auto tok = split_ws(line);
      if (tok.empty()) continue;
      if (tok.size() < column) throw PcdError("ascii row " + std::to_string(read) + " has too few values");
      auto value = [&](int idx) { return parse_number(tok[fields[static_cast<std::size_t>(idx)].column]); };
      keep(value(ix), value(iy), value(iz), ii >= 0 ? value(ii) : 0.0);
      ++read;
    }
    if (read != points) throw PcdError("expected " + std::to_string(points) + " rows, found " + std::to_string(read));
  } else if (data_kind == "binary") {
    local.encoding = PcdEncoding::Binary;
    const std::size_t stride = offset;
    if (bytes.size() - pos < stride * points) throw PcdError("binary PCD payload is truncated");
    const char* base = bytes.data() + pos;
    for (std::size_t r = 0; r < points; ++r) {
      const char* row = base + r * stride;
      auto value = [&](int idx) {
        const Field& f = fields[static_cast<std::size_t>(idx)];
        return read_binary(row + f.offset, f);
      };
      keep(value(ix), value(iy), value(iz), ii >= 0 ? value(ii) : 0.0);
    }
  } else {
    throw PcdError("unsupported PCD DATA encoding '" + data_kind + "'");
  }

  PointCloud cloud;
  cloud.points.resize(3, static_cast<Eigen::Index>(rows.size()));
  if (ii >= 0) cloud.intensity.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    cloud.points.col(static_cast<Eigen::Index>(r)) = rows[r].head<3>();
    if (ii >= 0) cloud.intensity(static_cast<Eigen::Index>(r)) = rows[r](3);
  }
  if (info) *info = local;
  return cloud;
}

PointCloud load_point_cloud(const std::filesystem::path& path, PcdLoadInfo* info) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PcdError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  return parse_pcd(bytes, info);
}

std::string encode_pcd(const PointCloud& cloud, PcdEncoding encoding) {
  const bool with_i = cloud.has_intensity();
  const auto n = static_cast<std::size_t>(cloud.size());
  std::ostringstream out;
  out << "# .PCD v0.7 - Point Cloud Data file format\n"
      << "VERSION 0.7\n"
      << (with_i ? "FIELDS x y z intensity\nSIZE 4 4 4 4\nTYPE F F F F\nCOUNT 1 1 1 1\n"
                 : "FIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\n")
      << "WIDTH " << n << "\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS " << n << "\n"
      << "DATA " << (encoding == PcdEncoding::Ascii ? "ascii" : "binary") << "\n";
  std::string s = out.str();
  const int channels = with_i ? 4 : 3;
  if (encoding == PcdEncoding::Ascii) {
    char buf[64];
    for (std::size_t r = 0; r < n; ++r) {
      for (int c = 0; c < channels; ++c) {
        const double v = c < 3 ? cloud.points(c, static_cast<Eigen::Index>(r))
                               : cloud.intensity(static_cast<Eigen::Index>(r));
        const auto res = std::to_chars(buf, buf + sizeof(buf), static_cast<float>(v));
        s.append(buf, res.ptr);
        s.push_back(c + 1 == channels ? '\n' : ' ');
      }
    }
  } else {
    const std::size_t start = s.size();
    s.resize(start + n * static_cast<std::size_t>(channels) * 4);
    char* p = s.data() + start;
    for (std::size_t r = 0; r < n; ++r) {
      for (int c = 0; c < channels; ++c) {
        const float v = static_cast<float>(c < 3 ? cloud.points(c, static_cast<Eigen::Index>(r))
                                                 : cloud.intensity(static_cast<Eigen::Index>(r)));
        std::memcpy(p, &v, 4);
        p += 4;
      }
    }
  }
  return s;
}

void save_point_cloud(const std::filesystem::path& path, const PointCloud& cloud, PcdEncoding encoding) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PcdError("cannot write " + path.string());
  const std::string bytes = encode_pcd(cloud, encoding);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace v2x

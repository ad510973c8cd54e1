#include "sqb/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace sqb {

namespace fs = std::filesystem;
using nlohmann::json;

bool Dataset::has_parts() const {
  if (views.empty()) return false;
  for (const auto& v : views)
    if (!v.parts) return false;
  return true;
}

void Dataset::validate() const {
  if (views.empty()) throw ConfigError("dataset has no views");
  const int w = width(), h = height();
  for (const auto& v : views) {
    if (v.camera.width != w || v.camera.height != h) throw ConfigError("dataset views differ in resolution");
    if (v.image.width != w || v.image.height != h || v.image.channels != 3)
      throw ConfigError("view " + std::to_string(v.id) + ": image must be RGB at camera resolution");
    if (v.silhouette.width != w || v.silhouette.height != h || v.silhouette.channels != 1)
      throw ConfigError("view " + std::to_string(v.id) + ": silhouette must be 1 channel at camera resolution");
    if (v.parts && (v.parts->width != w || v.parts->height != h))
      throw ConfigError("view " + std::to_string(v.id) + ": part mask resolution mismatch");
  }
}

namespace {

Image box_down(const Image& img, int f) {
  Image out(img.width / f, img.height / f, img.channels);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double s = 0.0;
        for (int j = 0; j < f; ++j)
          for (int i = 0; i < f; ++i) s += img.at(x * f + i, y * f + j, c);
        out.at(x, y, c) = s / (f * f);
      }
  return out;
}

std::string frame_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03d.png", id);
  return buf;
}

}  // namespace

Dataset Dataset::downscaled(int factor) const {
  if (factor <= 1) return *this;
  Dataset d;
  d.gt_points = gt_points;
  d.up = up;
  for (const auto& v : views) {
    View o;
    o.id = v.id;
    o.image = box_down(v.image, factor);
    o.silhouette = box_down(v.silhouette, factor);
    o.camera = v.camera.scaled(1.0 / factor);
    if (v.parts) {
      LabelImage l{v.parts->width / factor, v.parts->height / factor, {}};
      l.labels.resize(static_cast<std::size_t>(l.width) * l.height);
      for (int y = 0; y < l.height; ++y)
        for (int x = 0; x < l.width; ++x)
          l.labels[static_cast<std::size_t>(y) * l.width + x] = v.parts->at(x * factor + factor / 2, y * factor + factor / 2);
      o.parts = std::move(l);
    }
    d.views.push_back(std::move(o));
  }
  return d;
}

void write_points_ply(const fs::path& path, std::span<const Vec3> points) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << "ply\nformat binary_little_endian 1.0\nelement vertex " << points.size()
     << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  for (const Vec3& p : points) os.write(reinterpret_cast<const char*>(p.data()), 3 * sizeof(double));
}

std::vector<Vec3> read_points_ply(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  std::string line;
  std::size_t count = 0;
  std::vector<std::string> props;
  bool binary = false;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      binary = fmt == "binary_little_endian";
      if (!binary && fmt != "ascii") throw Error("unsupported PLY format " + fmt);
    } else if (tok == "element") {
      std::string name;
      ls >> name;
      if (name == "vertex") ls >> count;
    } else if (tok == "property") {
      std::string type, name;
      ls >> type >> name;
      props.push_back(type + " " + name);
    } else if (tok == "end_header") {
      break;
    }
  }
  std::vector<Vec3> pts(count);
  if (binary) {
    if (props.size() < 3 || props[0] != "double x" || props[1] != "double y" || props[2] != "double z" ||
        props.size() != 3)
      throw Error("point PLY must hold exactly double x, y, z");
    for (auto& p : pts) is.read(reinterpret_cast<char*>(p.data()), 3 * sizeof(double));
  } else {
    for (auto& p : pts) is >> p.x() >> p.y() >> p.z();
  }
  if (!is) throw Error("truncated PLY " + path.string());
  return pts;
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path cams_path = dir / "cameras.json";
  std::ifstream cs(cams_path);
  if (!cs) throw ConfigError("dataset is missing cameras.json: " + cams_path.string());
  json j;
  try {
    cs >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(cams_path.string() + ": " + e.what());
  }
  Dataset ds;
  if (j.contains("up")) {
    const auto u = j["up"].get<std::vector<double>>();
    ds.up = Vec3(u.at(0), u.at(1), u.at(2)).normalized();
  }
  for (const auto& jc : j.at("views")) {
    View v;
    v.id = jc.at("id").get<int>();
    const auto m = jc.at("view").get<std::vector<double>>();
    if (m.size() != 16) throw ConfigError("camera view matrix must hold 16 values");
    Mat4 view;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) view(r, c) = m[4 * r + c];
    v.camera = Camera::from_intrinsics(view, jc.at("fx"), jc.at("fy"), jc.at("cx"), jc.at("cy"), jc.at("width"),
                                       jc.at("height"), jc.value("near", 1e-2), jc.value("far", 1e3));
    const std::string name = frame_name(v.id);
    v.image = read_png(dir / "images" / name);
    if (v.image.channels == 1) {
      Image rgb(v.image.width, v.image.height, 3);
      for (std::size_t p = 0; p < v.image.pixel_count(); ++p)
        for (int c = 0; c < 3; ++c) rgb.data[3 * p + c] = v.image.data[p];
      v.image = std::move(rgb);
    }
    Image sil = read_png(dir / "silhouettes" / name);
    if (sil.channels != 1) {
      Image g(sil.width, sil.height, 1);
      for (std::size_t p = 0; p < sil.pixel_count(); ++p) g.data[p] = sil.data[p * sil.channels];
      sil = std::move(g);
    }
    v.silhouette = std::move(sil);
    if (fs::exists(dir / "masks" / name)) v.parts = read_label_png(dir / "masks" / name);
    ds.views.push_back(std::move(v));
  }
  if (fs::exists(dir / "gt_points.ply")) ds.gt_points = read_points_ply(dir / "gt_points.ply");
  ds.validate();
  return ds;
}

void save_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "silhouettes");
  json j;
  j["up"] = {ds.up.x(), ds.up.y(), ds.up.z()};
  j["views"] = json::array();
  bool masks = false;
  for (const auto& v : ds.views) {
    json jc;
    jc["id"] = v.id;
    jc["width"] = v.camera.width;
    jc["height"] = v.camera.height;
    jc["fx"] = v.camera.fx;
    jc["fy"] = v.camera.fy;
    jc["cx"] = v.camera.cx;
    jc["cy"] = v.camera.cy;
    jc["near"] = v.camera.near;
    jc["far"] = v.camera.far;
    std::vector<double> m;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) m.push_back(v.camera.view(r, c));
    jc["view"] = m;
    j["views"].push_back(jc);
    const std::string name = frame_name(v.id);
    write_png(dir / "images" / name, v.image);
    write_png(dir / "silhouettes" / name, v.silhouette);
    if (v.parts) {
      if (!masks) fs::create_directories(dir / "masks");
      masks = true;
      write_label_png(dir / "masks" / name, *v.parts);
    }
  }
  std::ofstream os(dir / "cameras.json");
  os << j.dump(2) << '\n';
  if (!ds.gt_points.empty()) write_points_ply(dir / "gt_points.ply", ds.gt_points);
}

}  // namespace sqb

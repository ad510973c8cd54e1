#include "sqb/gaussians.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace sqb {

namespace {
constexpr double kShC0 = 0.28209479177387814;
}

Mat3 quat_to_rotation(const Vec4& q) {
  const Vec4 n = q.normalized();
  return quat_to_rotation(n[0], n[1], n[2], n[3]);
}

Vec4 rotation_to_quat(const Mat3& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  Vec4 out(q.w(), q.x(), q.y(), q.z());
  return out[0] < 0.0 ? Vec4(-out) : out;
}

Vec4 quat_mul(const Vec4& a, const Vec4& b) {
  const auto r = quat_mul<double>({a[0], a[1], a[2], a[3]}, {b[0], b[1], b[2], b[3]});
  return {r[0], r[1], r[2], r[3]};
}

TriangleFrame triangle_frame(const Vec3& a, const Vec3& b, const Vec3& c, double unit) {
  TriangleFrame f;
  triangle_frame_t<double>(a, b, c, f.mu_t, f.r_t);
  f.unit = unit;
  return f;
}

std::vector<TriangleFrame> primitive_frames(const PrimitiveMesh& mesh, double unit) {
  std::vector<TriangleFrame> frames;
  frames.reserve(mesh.face_list().size());
  for (const Face& f : mesh.face_list())
    frames.push_back(triangle_frame(mesh.world_vertices[f[0]], mesh.world_vertices[f[1]], mesh.world_vertices[f[2]], unit));
  return frames;
}

double mean_edge_length(const PrimitiveMesh& mesh) {
  double total = 0.0;
  for (const Face& f : mesh.face_list())
    for (int k = 0; k < 3; ++k) total += (mesh.world_vertices[f[(k + 1) % 3]] - mesh.world_vertices[f[k]]).norm();
  return mesh.face_list().empty() ? 1.0 : total / (3.0 * mesh.face_list().size());
}

GlobalPose local_to_global(const BoundGaussian& g, const TriangleFrame& frame) {
  GlobalPose p;
  p.mu = frame.r_t * (frame.unit * g.mu) + frame.mu_t;
  p.quat = quat_mul(rotation_to_quat(frame.r_t), g.quat);
  return p;
}

int sh_coefficients(int degree) { return (degree + 1) * (degree + 1); }

GaussianScene::GaussianScene(Scene scene, int subdivision, int sh_degree)
    : scene_(std::move(scene)), tpl_(build_icosphere(subdivision)), sh_degree_(sh_degree) {
  if (sh_degree < 0 || sh_degree > 3) throw ConfigError("sh_degree must lie in [0, 3]");
  rebuild_frames();
}

void GaussianScene::rebuild_frames() {
  frames_.clear();
  for (const auto& p : scene_.primitives()) {
    const PrimitiveMesh mesh = deform(p.sq, tpl_);
    auto it = units_.find(p.sq.id());
    if (it == units_.end()) it = units_.emplace(p.sq.id(), mean_edge_length(mesh)).first;
    frames_[p.sq.id()] = primitive_frames(mesh, it->second);
  }
  for (auto it = units_.begin(); it != units_.end();)
    it = scene_.find(it->first) ? std::next(it) : units_.erase(it);
}

const TriangleFrame& GaussianScene::frame(PrimitiveId id, std::int32_t face) const {
  const auto it = frames_.find(id);
  if (it == frames_.end()) throw UnknownPrimitive(id);
  if (face < 0 || static_cast<std::size_t>(face) >= it->second.size())
    throw std::out_of_range("face " + std::to_string(face) + " out of range for primitive " + std::to_string(id));
  return it->second[face];
}

bool GaussianScene::binding_valid(const BoundGaussian& g) const {
  const auto it = frames_.find(g.id_k);
  return it != frames_.end() && g.id_t >= 0 && static_cast<std::size_t>(g.id_t) < it->second.size();
}

GaussianScene init_bound_gaussians(const Scene& scene, int subdivision, int sh_degree, const Vec3& base_color) {
  GaussianScene gs(scene, subdivision, sh_degree);
  const int nsh = sh_coefficients(sh_degree);
  for (const auto& p : gs.scene().primitives()) {
    if (p.sq.alpha() <= 0.0) continue;
    const PrimitiveMesh mesh = deform(p.sq, gs.icosphere());
    const auto& faces = mesh.face_list();
    for (std::size_t f = 0; f < faces.size(); ++f) {
      double edge = 0.0;
      for (int k = 0; k < 3; ++k)
        edge += (mesh.world_vertices[faces[f][(k + 1) % 3]] - mesh.world_vertices[faces[f][k]]).norm() / 3.0;
      BoundGaussian g;
      g.scale = Vec3::Constant(std::max(edge, 1e-6));
      g.sh.assign(3 * nsh, 0.0);
      for (int c = 0; c < 3; ++c) g.sh[c] = (base_color[c] - 0.5) / kShC0;
      g.id_k = p.sq.id();
      g.id_t = static_cast<std::int32_t>(f);
      gs.gaussians().push_back(std::move(g));
    }
  }
  return gs;
}

DensifyResult densify_and_prune(GaussianScene& gs, std::span<const double> grad_norm_mean, const DensifyConfig& cfg,
                                std::mt19937_64& rng) {
  auto& gaussians = gs.gaussians();
  if (grad_norm_mean.size() != gaussians.size()) throw std::invalid_argument("densify: gradient statistics size");
  DensifyResult res;
  std::vector<BoundGaussian> kept, added;
  std::vector<std::ptrdiff_t> kept_src;
  std::normal_distribution<double> gauss;
  const double limit = cfg.percent_dense * cfg.extent;
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    const BoundGaussian& g = gaussians[i];
    const bool hot = grad_norm_mean[i] >= cfg.grad_threshold;
    if (hot && g.scale.maxCoeff() <= limit) {
      kept.push_back(g);
      kept_src.push_back(static_cast<std::ptrdiff_t>(i));
      added.push_back(g);
      ++res.cloned;
    } else if (hot) {
      const Mat3 rq = quat_to_rotation(g.quat);
      const double unit = gs.frame(g.id_k, g.id_t).unit;
      for (int k = 0; k < 2; ++k) {
        BoundGaussian child = g;
        const Vec3 z(gauss(rng), gauss(rng), gauss(rng));
        child.mu = g.mu + rq * g.scale.cwiseProduct(z) / unit;
        child.scale = g.scale / 1.6;
        added.push_back(std::move(child));
      }
      ++res.split;
    } else {
      kept.push_back(g);
      kept_src.push_back(static_cast<std::ptrdiff_t>(i));
    }
  }
  std::vector<BoundGaussian> out;
  out.reserve(kept.size() + added.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (kept[i].opacity < cfg.prune_opacity) {
      ++res.pruned;
      continue;
    }
    out.push_back(std::move(kept[i]));
    res.source.push_back(kept_src[i]);
  }
  for (auto& g : added) {
    if (g.opacity < cfg.prune_opacity) {
      ++res.pruned;
      continue;
    }
    out.push_back(std::move(g));
    res.source.push_back(-1);
  }
  gaussians = std::move(out);
  return res;
}

double l_pos(std::span<const BoundGaussian> gaussians, const PosRegConfig& cfg, std::vector<Vec3>* grad) {
  if (!(cfg.epsilon_pos > 0.0)) throw ConfigError("epsilon_pos must be positive");
  if (grad) grad->assign(gaussians.size(), Vec3::Zero());
  if (gaussians.empty()) return 0.0;
  const double inv_n = 1.0 / gaussians.size();
  double total = 0.0;
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    const double r = gaussians[i].mu.norm();
    if (r <= cfg.epsilon_pos) continue;
    total += r - cfg.epsilon_pos;
    if (grad) (*grad)[i] = gaussians[i].mu / r * inv_n;
  }
  return total * inv_n;
}

EditSpec read_edit_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open edit file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  EditSpec spec;
  try {
    if (j.contains("edits")) {
      for (const auto& e : j.at("edits")) {
        const auto m = e.at("matrix").get<std::vector<double>>();
        if (m.size() != 16) throw ConfigError(path.string() + ": edit matrix needs 16 values");
        Mat4 mat;
        for (int r = 0; r < 4; ++r)
          for (int c = 0; c < 4; ++c) mat(r, c) = m[4 * r + c];
        spec.edits.emplace_back(e.at("id").get<PrimitiveId>(), mat);
      }
    }
    if (j.contains("delete")) spec.deletions = j.at("delete").get<std::vector<PrimitiveId>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return spec;
}

void write_edit_file(const std::filesystem::path& path, const EditSpec& spec) {
  nlohmann::ordered_json j;
  j["edits"] = nlohmann::ordered_json::array();
  for (const auto& [id, m] : spec.edits) {
    std::vector<double> flat;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) flat.push_back(m(r, c));
    j["edits"].push_back({{"id", id}, {"matrix", flat}});
  }
  j["delete"] = spec.deletions;
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void apply_edit(GaussianScene& gs, const EditSpec& spec) {
  for (const auto& [id, m] : spec.edits) {
    if (!gs.scene().find(id)) throw UnknownPrimitive(id);
    const Mat3 r = m.block<3, 3>(0, 0);
    const bool rigid = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-6 && r.determinant() > 0.0 &&
                       m.row(3).isApprox(Eigen::RowVector4d(0, 0, 0, 1), 1e-12) && m.allFinite();
    if (!rigid) throw ConfigError("edit matrix for primitive " + std::to_string(id) + " is not a rigid transform");
  }
  for (PrimitiveId id : spec.deletions)
    if (!gs.scene().find(id)) throw UnknownPrimitive(id);
  for (const auto& [id, m] : spec.edits) {
    Primitive& p = gs.scene().at(id);
    p.sq = p.sq.transformed(m.block<3, 3>(0, 0), m.block<3, 1>(0, 3));
  }
  for (PrimitiveId id : spec.deletions) {
    gs.scene().erase(id);
    auto& g = gs.gaussians();
    g.erase(std::remove_if(g.begin(), g.end(), [id](const BoundGaussian& x) { return x.id_k == id; }), g.end());
  }
  gs.rebuild_frames();
}

void write_splat_ply(const std::filesystem::path& path, const GaussianScene& gs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const int nsh = sh_coefficients(gs.sh_degree());
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << gs.gaussians().size() << '\n';
  for (const char* n : {"x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity"})
    out << "property float " << n << '\n';
  for (int c = 0; c < 3; ++c) out << "property float f_dc_" << c << '\n';
  for (int k = 0; k < 3 * (nsh - 1); ++k) out << "property float f_rest_" << k << '\n';
  out << "property int id_k\nproperty int id_t\nend_header\n";
  auto put = [&](auto v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  for (const auto& g : gs.gaussians()) {
    const GlobalPose w = gs.world_pose(g);
    for (int k = 0; k < 3; ++k) put(static_cast<float>(w.mu[k]));
    for (int k = 0; k < 3; ++k) put(static_cast<float>(g.scale[k]));
    for (int k = 0; k < 4; ++k) put(static_cast<float>(w.quat[k]));
    put(static_cast<float>(g.opacity));
    for (int c = 0; c < 3; ++c) put(static_cast<float>(g.sh[c]));
    // rest coefficients channel-major, as other splat tools expect
    for (int c = 0; c < 3; ++c)
      for (int k = 1; k < nsh; ++k) put(static_cast<float>(g.sh[3 * k + c]));
    put(static_cast<std::int32_t>(g.id_k));
    put(static_cast<std::int32_t>(g.id_t));
  }
}

}  // namespace sqb

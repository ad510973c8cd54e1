#pragma once

// Splat Gaussians bound to superquadric triangles.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <vector>

#include "sqb/scene.hpp"

namespace sqb {

// quaternions are Vec4 in (w, x, y, z) order

template <typename T>
Eigen::Matrix<T, 3, 3> quat_to_rotation(const T& w, const T& x, const T& y, const T& z) {
  Eigen::Matrix<T, 3, 3> r;
  r(0, 0) = 1.0 - 2.0 * (y * y + z * z);
  r(0, 1) = 2.0 * (x * y - w * z);
  r(0, 2) = 2.0 * (x * z + w * y);
  r(1, 0) = 2.0 * (x * y + w * z);
  r(1, 1) = 1.0 - 2.0 * (x * x + z * z);
  r(1, 2) = 2.0 * (y * z - w * x);
  r(2, 0) = 2.0 * (x * z - w * y);
  r(2, 1) = 2.0 * (y * z + w * x);
  r(2, 2) = 1.0 - 2.0 * (x * x + y * y);
  return r;
}

template <typename T>
std::array<T, 4> quat_mul(const std::array<T, 4>& a, const std::array<T, 4>& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
          a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
          a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

Mat3 quat_to_rotation(const Vec4& q);
/// Unit quaternion with w >= 0.
Vec4 rotation_to_quat(const Mat3& r);
Vec4 quat_mul(const Vec4& a, const Vec4& b);

struct BoundGaussian {
  Vec3 mu = Vec3::Zero();  // triangle-local, in units of the owner's mean edge length
  Vec4 quat = Vec4(1, 0, 0, 0);
  Vec3 scale = Vec3::Ones();  // world units
  double opacity = 0.5;
  std::vector<double> sh;  // 3 per coefficient, coefficient-major
  PrimitiveId id_k = 0;
  std::int32_t id_t = 0;
};

/// Rigid frame of one triangle: centre, columns (edge, normal x edge, normal),
/// and the length unit of local offsets.
struct TriangleFrame {
  Vec3 mu_t = Vec3::Zero();
  Mat3 r_t = Mat3::Identity();
  double unit = 1.0;
};

/// Edge a->b fixes the first axis, the winding normal the third.
template <typename T>
void triangle_frame_t(const Eigen::Matrix<T, 3, 1>& a, const Eigen::Matrix<T, 3, 1>& b,
                      const Eigen::Matrix<T, 3, 1>& c, Eigen::Matrix<T, 3, 1>& centre, Eigen::Matrix<T, 3, 3>& r) {
  using std::sqrt;
  centre = (a + b + c) / 3.0;
  Eigen::Matrix<T, 3, 1> e = b - a;
  e = e / sqrt(e.dot(e));
  Eigen::Matrix<T, 3, 1> n = (b - a).cross(c - a);
  n = n / sqrt(n.dot(n));
  r.col(0) = e;
  r.col(1) = n.cross(e);
  r.col(2) = n;
}
TriangleFrame triangle_frame(const Vec3& a, const Vec3& b, const Vec3& c, double unit = 1.0);
std::vector<TriangleFrame> primitive_frames(const PrimitiveMesh& mesh, double unit);
double mean_edge_length(const PrimitiveMesh& mesh);

struct GlobalPose {
  Vec3 mu = Vec3::Zero();
  Vec4 quat = Vec4(1, 0, 0, 0);
};
/// mu' = R_t (unit * mu) + mu_t, q' = Q(R_t) q.
GlobalPose local_to_global(const BoundGaussian& g, const TriangleFrame& frame);

int sh_coefficients(int degree);

/// Superquadrics plus their bound Gaussians. Frames follow the current
/// primitive parameters; call rebuild_frames after changing them.
class GaussianScene {
 public:
  GaussianScene() = default;
  GaussianScene(Scene scene, int subdivision, int sh_degree);

  Scene& scene() { return scene_; }
  const Scene& scene() const { return scene_; }
  const IcosphereTemplate& icosphere() const { return tpl_; }
  int sh_degree() const { return sh_degree_; }
  std::vector<BoundGaussian>& gaussians() { return gaussians_; }
  const std::vector<BoundGaussian>& gaussians() const { return gaussians_; }

  /// Length unit of each primitive, fixed at binding time.
  const std::map<PrimitiveId, double>& units() const { return units_; }
  void set_unit(PrimitiveId id, double unit) { units_[id] = unit; }

  void rebuild_frames();
  const TriangleFrame& frame(PrimitiveId id, std::int32_t face) const;
  bool binding_valid(const BoundGaussian& g) const;
  GlobalPose world_pose(const BoundGaussian& g) const { return local_to_global(g, frame(g.id_k, g.id_t)); }

 private:
  Scene scene_;
  IcosphereTemplate tpl_;
  int sh_degree_ = 1;
  std::vector<BoundGaussian> gaussians_;
  std::map<PrimitiveId, double> units_;
  std::map<PrimitiveId, std::vector<TriangleFrame>> frames_;
};

/// One Gaussian per face of every primitive with nonzero opacity: mu = 0,
/// identity rotation, isotropic scale equal to the face's mean edge length,
/// opacity 0.5, constant colour `base_color`.
GaussianScene init_bound_gaussians(const Scene& scene, int subdivision, int sh_degree, const Vec3& base_color);

struct DensifyConfig {
  double grad_threshold = 2e-4;  // mean screen-space position gradient norm
  double percent_dense = 0.01;   // of the scene extent: clone below, split above
  double extent = 1.0;
  double prune_opacity = 0.005;  // strictly below is removed
};

/// New-to-old index map (-1 for newly created Gaussians) and counts.
struct DensifyResult {
  std::vector<std::ptrdiff_t> source;
  int cloned = 0;
  int split = 0;
  int pruned = 0;
};

/// Clone and split in the triangle-local frame, then prune by opacity.
/// `grad_norm_mean` holds one value per Gaussian.
DensifyResult densify_and_prune(GaussianScene& gs, std::span<const double> grad_norm_mean, const DensifyConfig& cfg,
                                std::mt19937_64& rng);

struct PosRegConfig {
  double epsilon_pos = 0.5;
};
/// Mean over Gaussians of max(|mu|, eps) - eps. `grad` receives d/d(mu).
double l_pos(std::span<const BoundGaussian> gaussians, const PosRegConfig& cfg, std::vector<Vec3>* grad = nullptr);

struct EditSpec {
  std::vector<std::pair<PrimitiveId, Mat4>> edits;  // rigid world transforms
  std::vector<PrimitiveId> deletions;
};
/// JSON {edits: [{id, matrix: 16 floats row-major}], delete: [ids]}.
EditSpec read_edit_file(const std::filesystem::path& path);
void write_edit_file(const std::filesystem::path& path, const EditSpec& spec);

/// Moves edited primitives, removes deleted ones with all their Gaussians and
/// recomputes frames. Throws UnknownPrimitive, ConfigError for non-rigid matrices.
void apply_edit(GaussianScene& gs, const EditSpec& spec);

/// Binary little-endian PLY of world-space splats with id_k, id_t.
void write_splat_ply(const std::filesystem::path& path, const GaussianScene& gs);

}  // namespace sqb

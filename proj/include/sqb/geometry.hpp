#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "sqb/common.hpp"

namespace sqb {

using Rot6 = std::array<double, 6>;

/// Gram-Schmidt map from the continuous 6D representation to SO(3). The two
/// 3-vector halves become the first two columns after orthonormalization.
/// Throws DegenerateRotation when a normalization divides by a norm < 1e-12.
Mat3 rot6d_to_matrix(const Rot6& r6);

/// Jacobian of the column-major flattened rotation with respect to rot6.
Eigen::Matrix<double, 9, 6> rot6d_jacobian(const Rot6& r6);

/// Inverse of rot6d_to_matrix on SO(3): the first two columns.
Rot6 matrix_to_rot6d(const Mat3& r);

/// sgn(x) |x|^e, with the convention 0^e = 0.
inline double signed_pow(double x, double e) {
  const double a = std::abs(x);
  if (a == 0.0) return 0.0;
  return std::copysign(std::pow(a, e), x);
}

/// Superquadric block {alpha, rot6, trans, scale, eps}.
class Superquadric {
 public:
  static constexpr double kEpsMin = 0.1;
  static constexpr double kEpsMax = 1.9;
  static constexpr double kMinScale = 1e-4;

  // Flat parameter layout used by the optimizer.
  static constexpr std::size_t kParamCount = 15;
  static constexpr std::size_t kAlpha = 0;
  static constexpr std::size_t kRot = 1;
  static constexpr std::size_t kTrans = 7;
  static constexpr std::size_t kScale = 10;
  static constexpr std::size_t kEps = 13;
  using Params = std::array<double, kParamCount>;

  /// Throws std::invalid_argument on non-positive scale, alpha outside [0,1] or
  /// a zero rot6. Shape exponents are clamped to [kEpsMin, kEpsMax].
  Superquadric(double alpha, const Rot6& rot6, const Vec3& trans, const Vec3& scale, const Vec2& eps,
               PrimitiveId id);

  /// Projects an unconstrained optimizer vector back onto the valid set
  /// (alpha clamped to [0,1], eps clamped, scale floored at kMinScale).
  static Superquadric from_params(std::span<const double> params, PrimitiveId id);
  Params params() const;

  double alpha() const { return alpha_; }
  const Rot6& rot6() const { return rot6_; }
  const Vec3& trans() const { return trans_; }
  const Vec3& scale() const { return scale_; }
  const Vec2& eps() const { return eps_; }
  PrimitiveId id() const { return id_; }
  const Mat3& rotation() const { return rotation_; }

  Superquadric with_alpha(double alpha) const;
  Superquadric with_id(PrimitiveId id) const;
  /// Applies a rigid transform x -> R x + t to the primitive's pose.
  Superquadric transformed(const Mat3& r, const Vec3& t) const;

  /// Inside-outside function evaluated in the primitive's local frame; equals 1
  /// on the surface and is < 1 inside.
  double implicit_local(const Vec3& p_local) const;
  /// True when the world point is strictly inside.
  bool contains(const Vec3& p_world) const;

 private:
  double alpha_;
  Rot6 rot6_;
  Vec3 trans_;
  Vec3 scale_;
  Vec2 eps_;
  PrimitiveId id_;
  Mat3 rotation_;
};

/// Point of the canonical surface before rotation and translation.
Vec3 local_surface_point(const Vec3& scale, const Vec2& eps, double eta, double omega);
/// World-space surface point for spherical coordinates (eta, omega).
Vec3 surface_point(const Superquadric& sq, double eta, double omega);

struct IcosphereTemplate {
  std::vector<Vec3> vertices;
  std::vector<double> eta;
  std::vector<double> omega;
  std::shared_ptr<const std::vector<Face>> faces;
  int subdivision_level = 0;

  std::size_t vertex_count() const { return vertices.size(); }
  std::size_t face_count() const { return faces->size(); }
};

/// Subdivided icosahedron projected onto the unit sphere, outward (CCW) winding.
/// Level must lie in [0, 5].
IcosphereTemplate build_icosphere(int subdivision_level);

struct PrimitiveMesh {
  std::vector<Vec3> world_vertices;
  std::shared_ptr<const std::vector<Face>> faces;
  PrimitiveId owner_id = -1;

  const std::vector<Face>& face_list() const { return *faces; }
  Vec3 centroid() const;
};

PrimitiveMesh deform(const Superquadric& sq, const IcosphereTemplate& tpl);

/// Vector-Jacobian product of deform: maps dL/d(world_vertices) (3 per vertex)
/// to dL/d(params) in the Superquadric flat layout. The alpha slot is left 0.
Superquadric::Params deform_vjp(const Superquadric& sq, const IcosphereTemplate& tpl,
                                std::span<const double> vertex_grad);

/// Mean of the template's deformed unit-scale local points for shape eps.
Vec3 mean_unit_local_point(const Vec2& eps, const IcosphereTemplate& tpl);

}  // namespace sqb

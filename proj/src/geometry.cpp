#include "sqb/geometry.hpp"

#include <algorithm>
#include <map>
#include <numbers>
#include <stdexcept>

#include "sqb/autodiff.hpp"

namespace sqb {

namespace {

constexpr double kDegenerateNorm = 1e-12;

template <class T>
std::array<T, 9> gram_schmidt(const std::array<T, 6>& r) {
  using std::sqrt;
  const T n1 = sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
  if (ad::value_of(n1) < kDegenerateNorm) throw DegenerateRotation("rot6: first column has zero norm");
  const T b1[3] = {r[0] / n1, r[1] / n1, r[2] / n1};
  const T d = b1[0] * r[3] + b1[1] * r[4] + b1[2] * r[5];
  const T u2[3] = {r[3] - d * b1[0], r[4] - d * b1[1], r[5] - d * b1[2]};
  const T n2 = sqrt(u2[0] * u2[0] + u2[1] * u2[1] + u2[2] * u2[2]);
  if (ad::value_of(n2) < kDegenerateNorm) throw DegenerateRotation("rot6: columns are parallel");
  const T b2[3] = {u2[0] / n2, u2[1] / n2, u2[2] / n2};
  const T b3[3] = {b1[1] * b2[2] - b1[2] * b2[1], b1[2] * b2[0] - b1[0] * b2[2], b1[0] * b2[1] - b1[1] * b2[0]};
  // column-major
  return {b1[0], b1[1], b1[2], b2[0], b2[1], b2[2], b3[0], b3[1], b3[2]};
}

}  // namespace

double PixelBox::diagonal() const { return std::hypot(width(), height()); }

PixelBox PixelBox::merged(const PixelBox& a, const PixelBox& b) {
  return {std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1), std::max(a.y1, b.y1)};
}

Mat3 rot6d_to_matrix(const Rot6& r6) {
  const auto m = gram_schmidt<double>(r6);
  Mat3 r;
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < 3; ++k) r(k, c) = m[3 * c + k];
  return r;
}

Eigen::Matrix<double, 9, 6> rot6d_jacobian(const Rot6& r6) {
  using D = ad::Dual<6>;
  std::array<D, 6> in;
  for (int i = 0; i < 6; ++i) in[i] = D::variable(r6[i], i);
  const auto m = gram_schmidt<D>(in);
  Eigen::Matrix<double, 9, 6> j;
  for (int a = 0; a < 9; ++a)
    for (int b = 0; b < 6; ++b) j(a, b) = m[a].d[b];
  return j;
}

Rot6 matrix_to_rot6d(const Mat3& r) { return {r(0, 0), r(1, 0), r(2, 0), r(0, 1), r(1, 1), r(2, 1)}; }

Superquadric::Superquadric(double alpha, const Rot6& rot6, const Vec3& trans, const Vec3& scale, const Vec2& eps,
                           PrimitiveId id)
    : alpha_(alpha), rot6_(rot6), trans_(trans), scale_(scale), id_(id) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("superquadric alpha outside [0,1]");
  if (!(scale.minCoeff() > 0.0) || !scale.allFinite()) throw std::invalid_argument("superquadric scale must be > 0");
  if (!trans.allFinite()) throw std::invalid_argument("superquadric translation not finite");
  eps_ = Vec2(std::clamp(eps.x(), kEpsMin, kEpsMax), std::clamp(eps.y(), kEpsMin, kEpsMax));
  if (!eps.allFinite()) throw std::invalid_argument("superquadric eps not finite");
  rotation_ = rot6d_to_matrix(rot6_);
}

Superquadric Superquadric::from_params(std::span<const double> p, PrimitiveId id) {
  if (p.size() != kParamCount) throw std::invalid_argument("superquadric parameter vector must have 15 entries");
  Rot6 r6;
  std::copy_n(p.begin() + kRot, 6, r6.begin());
  const Vec3 s(std::max(p[kScale], kMinScale), std::max(p[kScale + 1], kMinScale), std::max(p[kScale + 2], kMinScale));
  return Superquadric(std::clamp(p[kAlpha], 0.0, 1.0), r6, Vec3(p[kTrans], p[kTrans + 1], p[kTrans + 2]), s,
                      Vec2(p[kEps], p[kEps + 1]), id);
}

Superquadric::Params Superquadric::params() const {
  Params p{};
  p[kAlpha] = alpha_;
  std::copy(rot6_.begin(), rot6_.end(), p.begin() + kRot);
  for (int i = 0; i < 3; ++i) {
    p[kTrans + i] = trans_[i];
    p[kScale + i] = scale_[i];
  }
  p[kEps] = eps_.x();
  p[kEps + 1] = eps_.y();
  return p;
}

Superquadric Superquadric::with_alpha(double alpha) const {
  return Superquadric(alpha, rot6_, trans_, scale_, eps_, id_);
}

Superquadric Superquadric::with_id(PrimitiveId id) const {
  return Superquadric(alpha_, rot6_, trans_, scale_, eps_, id);
}

Superquadric Superquadric::transformed(const Mat3& r, const Vec3& t) const {
  // rotating the raw columns keeps an identity edit bit-exact
  const Vec3 a = r * Vec3(rot6_[0], rot6_[1], rot6_[2]);
  const Vec3 b = r * Vec3(rot6_[3], rot6_[4], rot6_[5]);
  return Superquadric(alpha_, {a[0], a[1], a[2], b[0], b[1], b[2]}, r * trans_ + t, scale_, eps_, id_);
}

double Superquadric::implicit_local(const Vec3& p) const {
  const double e1 = eps_.x(), e2 = eps_.y();
  const double ax = std::pow(std::abs(p.x() / scale_.x()), 2.0 / e2);
  const double az = std::pow(std::abs(p.z() / scale_.z()), 2.0 / e2);
  const double ay = std::pow(std::abs(p.y() / scale_.y()), 2.0 / e1);
  return std::pow(ax + az, e2 / e1) + ay;
}

bool Superquadric::contains(const Vec3& p_world) const {
  return implicit_local(rotation_.transpose() * (p_world - trans_)) < 1.0;
}

Vec3 local_surface_point(const Vec3& scale, const Vec2& eps, double eta, double omega) {
  const double ce = signed_pow(std::cos(eta), eps.x());
  const double se = signed_pow(std::sin(eta), eps.x());
  const double cw = signed_pow(std::cos(omega), eps.y());
  const double sw = signed_pow(std::sin(omega), eps.y());
  return {scale.x() * ce * cw, scale.y() * se, scale.z() * ce * sw};
}

Vec3 surface_point(const Superquadric& sq, double eta, double omega) {
  return sq.rotation() * local_surface_point(sq.scale(), sq.eps(), eta, omega) + sq.trans();
}

IcosphereTemplate build_icosphere(int level) {
  if (level < 0 || level > 5) throw std::invalid_argument("icosphere subdivision level must be in [0, 5]");
  const double t = std::numbers::phi;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<Face> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},  {5, 11, 4},
                         {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6},  {3, 6, 8},
                         {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const int idx = static_cast<int>(v.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<Face> next;
    next.reserve(f.size() * 4);
    for (const Face& face : f) {
      const int a = mid(face[0], face[1]);
      const int b = mid(face[1], face[2]);
      const int c = mid(face[2], face[0]);
      next.emplace_back(face[0], a, c);
      next.emplace_back(face[1], b, a);
      next.emplace_back(face[2], c, b);
      next.emplace_back(a, b, c);
    }
    f = std::move(next);
  }
  IcosphereTemplate tpl;
  tpl.subdivision_level = level;
  tpl.eta.reserve(v.size());
  tpl.omega.reserve(v.size());
  for (const Vec3& p : v) {
    tpl.eta.push_back(std::asin(std::clamp(p.y(), -1.0, 1.0)));
    tpl.omega.push_back(std::atan2(p.z(), p.x()));
  }
  tpl.vertices = std::move(v);
  tpl.faces = std::make_shared<const std::vector<Face>>(std::move(f));
  return tpl;
}

Vec3 PrimitiveMesh::centroid() const {
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : world_vertices) c += p;
  return world_vertices.empty() ? c : Vec3(c / static_cast<double>(world_vertices.size()));
}

PrimitiveMesh deform(const Superquadric& sq, const IcosphereTemplate& tpl) {
  PrimitiveMesh mesh;
  mesh.faces = tpl.faces;
  mesh.owner_id = sq.id();
  mesh.world_vertices.resize(tpl.vertex_count());
  const Mat3& r = sq.rotation();
  for (std::size_t i = 0; i < tpl.vertex_count(); ++i)
    mesh.world_vertices[i] = r * local_surface_point(sq.scale(), sq.eps(), tpl.eta[i], tpl.omega[i]) + sq.trans();
  return mesh;
}

Superquadric::Params deform_vjp(const Superquadric& sq, const IcosphereTemplate& tpl,
                                std::span<const double> vertex_grad) {
  using P = Superquadric;
  if (vertex_grad.size() != 3 * tpl.vertex_count()) throw std::invalid_argument("deform_vjp: gradient size");
  P::Params out{};
  const Mat3& r = sq.rotation();
  const Vec3& s = sq.scale();
  const double e1 = sq.eps().x(), e2 = sq.eps().y();
  // dL/dR accumulated as sum_i g_i local_i^T
  Mat3 grad_r = Mat3::Zero();
  for (std::size_t i = 0; i < tpl.vertex_count(); ++i) {
    const Vec3 g(vertex_grad[3 * i], vertex_grad[3 * i + 1], vertex_grad[3 * i + 2]);
    if (g.isZero(0.0)) continue;
    const double c_eta = std::cos(tpl.eta[i]), s_eta = std::sin(tpl.eta[i]);
    const double c_om = std::cos(tpl.omega[i]), s_om = std::sin(tpl.omega[i]);
    const double ce = signed_pow(c_eta, e1), se = signed_pow(s_eta, e1);
    const double cw = signed_pow(c_om, e2), sw = signed_pow(s_om, e2);
    // d spow(x, e)/de = spow(x, e) ln|x|, zero at x = 0
    auto dlog = [](double spow, double x) { return spow == 0.0 ? 0.0 : spow * std::log(std::abs(x)); };
    const double dce = dlog(ce, c_eta), dse = dlog(se, s_eta);
    const double dcw = dlog(cw, c_om), dsw = dlog(sw, s_om);
    const Vec3 local(s.x() * ce * cw, s.y() * se, s.z() * ce * sw);
    const Vec3 gl = r.transpose() * g;  // gradient w.r.t. the local point
    grad_r += g * local.transpose();
    for (int k = 0; k < 3; ++k) out[P::kTrans + k] += g[k];
    out[P::kScale + 0] += gl.x() * ce * cw;
    out[P::kScale + 1] += gl.y() * se;
    out[P::kScale + 2] += gl.z() * ce * sw;
    out[P::kEps + 0] += gl.x() * s.x() * dce * cw + gl.y() * s.y() * dse + gl.z() * s.z() * dce * sw;
    out[P::kEps + 1] += gl.x() * s.x() * ce * dcw + gl.z() * s.z() * ce * dsw;
  }
  const Eigen::Matrix<double, 9, 6> jr = rot6d_jacobian(sq.rot6());
  const Eigen::Map<const Eigen::Matrix<double, 9, 1>> gr_flat(grad_r.data());
  const Eigen::Matrix<double, 6, 1> g6 = jr.transpose() * gr_flat;
  for (int k = 0; k < 6; ++k) out[P::kRot + k] = g6[k];
  return out;
}

Vec3 mean_unit_local_point(const Vec2& eps, const IcosphereTemplate& tpl) {
  Vec3 acc = Vec3::Zero();
  for (std::size_t i = 0; i < tpl.vertex_count(); ++i)
    acc += local_surface_point(Vec3::Ones(), eps, tpl.eta[i], tpl.omega[i]);
  return acc / static_cast<double>(tpl.vertex_count());
}

}  // namespace sqb

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "doctest.h"
#include "sqb/geometry.hpp"

using namespace sqb;

namespace {

Rot6 random_rot6(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Rot6 r;
  for (auto& x : r) x = n(rng);
  return r;
}

// inside-outside function written out independently of the library
double implicit(const Vec3& p, const Vec3& s, const Vec2& e) {
  const double xz = std::pow(std::abs(p.x() / s.x()), 2.0 / e[1]) + std::pow(std::abs(p.z() / s.z()), 2.0 / e[1]);
  return std::pow(xz, e[1] / e[0]) + std::pow(std::abs(p.y() / s.y()), 2.0 / e[0]);
}

Superquadric unit_sphere(PrimitiveId id = 0) {
  return Superquadric(1.0, {1, 0, 0, 0, 1, 0}, Vec3::Zero(), Vec3::Ones(), Vec2(1, 1), id);
}

}  // namespace

TEST_CASE("rot6d identity and scale invariance") {
  CHECK((rot6d_to_matrix({1, 0, 0, 0, 1, 0}) - Mat3::Identity()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((rot6d_to_matrix({2, 0, 0, 0, 3, 0}) - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("rot6d gives proper rotations") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const Mat3 m = rot6d_to_matrix(random_rot6(rng));
    CHECK((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(m.determinant() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("rot6d round trip and degenerate input") {
  std::mt19937_64 rng(8);
  const Mat3 m = rot6d_to_matrix(random_rot6(rng));
  CHECK((rot6d_to_matrix(matrix_to_rot6d(m)) - m).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(rot6d_to_matrix({0, 0, 0, 0, 1, 0}), DegenerateRotation);
  CHECK_THROWS_AS(rot6d_to_matrix({1, 0, 0, 2, 0, 0}), DegenerateRotation);
}

TEST_CASE("rot6d jacobian matches finite differences") {
  std::mt19937_64 rng(9);
  const Rot6 r = random_rot6(rng);
  const auto jac = rot6d_jacobian(r);
  const double h = 1e-6;
  for (int k = 0; k < 6; ++k) {
    Rot6 a = r, b = r;
    a[k] += h;
    b[k] -= h;
    const Mat3 d = (rot6d_to_matrix(a) - rot6d_to_matrix(b)) / (2 * h);
    for (int e = 0; e < 9; ++e) CHECK(jac(e, k) == doctest::Approx(d(e % 3, e / 3)).epsilon(1e-6));
  }
}

TEST_CASE("surface point on the unit sphere") {
  const auto sq = unit_sphere();
  CHECK((surface_point(sq, 0.0, 0.0) - Vec3(1, 0, 0)).norm() < 1e-12);
  CHECK((surface_point(sq, std::numbers::pi / 2, 0.0) - Vec3(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("surface points satisfy the implicit equation") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 200; ++i) {
    const Vec3 s(0.2 + u(rng), 0.2 + u(rng), 0.2 + u(rng));
    const Vec2 e(0.2 + 1.6 * u(rng), 0.2 + 1.6 * u(rng));
    const Superquadric sq(0.7, random_rot6(rng), Vec3(u(rng), u(rng), u(rng)), s, e, 1);
    const double eta = (u(rng) - 0.5) * 0.98 * std::numbers::pi;
    const double omega = (u(rng) * 2 - 1) * std::numbers::pi;
    const Vec3 p = surface_point(sq, eta, omega);
    const Vec3 local = sq.rotation().transpose() * (p - sq.trans());
    CHECK(implicit(local, s, e) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(sq.implicit_local(local) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("superquadric validation and projection") {
  CHECK_THROWS_AS(Superquadric(1.0, {1, 0, 0, 0, 1, 0}, Vec3::Zero(), Vec3(1, 0, 1), Vec2(1, 1), 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(Superquadric(1.5, {1, 0, 0, 0, 1, 0}, Vec3::Zero(), Vec3::Ones(), Vec2(1, 1), 0),
                  std::invalid_argument);
  const Superquadric clamped(1.0, {1, 0, 0, 0, 1, 0}, Vec3::Zero(), Vec3::Ones(), Vec2(0.01, 3.0), 0);
  CHECK(clamped.eps()[0] == Superquadric::kEpsMin);
  CHECK(clamped.eps()[1] == Superquadric::kEpsMax);

  auto p = unit_sphere().params();
  p[Superquadric::kAlpha] = 1.7;
  p[Superquadric::kScale] = -2.0;
  const auto q = Superquadric::from_params(p, 4);
  CHECK(q.alpha() == 1.0);
  CHECK(q.scale().x() == Superquadric::kMinScale);
  CHECK(q.id() == 4);
}

TEST_CASE("icosphere counts") {
  const auto l0 = build_icosphere(0);
  CHECK(l0.vertex_count() == 12);
  CHECK(l0.face_count() == 20);
  const auto l1 = build_icosphere(1);
  CHECK(l1.vertex_count() == 42);
  CHECK(l1.face_count() == 80);
  CHECK_THROWS(build_icosphere(6));
  CHECK_THROWS(build_icosphere(-1));
}

TEST_CASE("icosphere euler characteristic and winding") {
  const auto t = build_icosphere(2);
  std::set<std::pair<int, int>> edges;
  for (const auto& f : *t.faces) {
    for (int k = 0; k < 3; ++k) {
      const int a = f[k], b = f[(k + 1) % 3];
      edges.insert({std::min(a, b), std::max(a, b)});
    }
    const Vec3 n = (t.vertices[f[1]] - t.vertices[f[0]]).cross(t.vertices[f[2]] - t.vertices[f[0]]);
    CHECK(n.dot(t.vertices[f[0]] + t.vertices[f[1]] + t.vertices[f[2]]) > 0.0);
  }
  const long v = static_cast<long>(t.vertex_count()), e = static_cast<long>(edges.size()),
             f = static_cast<long>(t.face_count());
  CHECK(v - e + f == 2);
  for (const auto& p : t.vertices) CHECK(p.norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("deform the unit sphere reproduces the template") {
  const auto t = build_icosphere(2);
  const auto m = deform(unit_sphere(), t);
  double err = 0.0;
  for (std::size_t i = 0; i < t.vertex_count(); ++i) err = std::max(err, (m.world_vertices[i] - t.vertices[i]).norm());
  CHECK(err < 1e-9);
}

TEST_CASE("deformed ellipsoid satisfies its implicit equation") {
  const auto t = build_icosphere(2);
  const Superquadric sq(1.0, {1, 0, 0, 0, 1, 0}, Vec3::Zero(), Vec3(2, 1, 1), Vec2(1, 1), 0);
  for (const auto& p : deform(sq, t).world_vertices)
    CHECK(implicit(p, Vec3(2, 1, 1), Vec2(1, 1)) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("translation shifts the centroid exactly") {
  const auto t = build_icosphere(2);
  const Superquadric a(1.0, {1, 0.2, 0, 0, 1, 0.3}, Vec3::Zero(), Vec3(0.5, 1, 0.7), Vec2(0.6, 1.4), 0);
  const Superquadric b(1.0, {1, 0.2, 0, 0, 1, 0.3}, Vec3(0, 0, 5), Vec3(0.5, 1, 0.7), Vec2(0.6, 1.4), 0);
  CHECK((deform(b, t).centroid() - deform(a, t).centroid() - Vec3(0, 0, 5)).norm() < 1e-12);
}

TEST_CASE("deform vjp matches finite differences") {
  const auto t = build_icosphere(1);
  const Superquadric sq(0.8, {1, 0.1, 0.2, -0.1, 1, 0.3}, Vec3(0.1, -0.2, 0.3), Vec3(0.6, 0.9, 0.4), Vec2(0.7, 1.3),
                        0);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::vector<double> w(3 * t.vertex_count());
  for (auto& x : w) x = n(rng);
  const auto g = deform_vjp(sq, t, w);
  auto f = [&](const Superquadric& q) {
    const auto m = deform(q, t);
    double s = 0.0;
    for (std::size_t i = 0; i < m.world_vertices.size(); ++i)
      for (int k = 0; k < 3; ++k) s += w[3 * i + k] * m.world_vertices[i][k];
    return s;
  };
  const double h = 1e-6;
  for (std::size_t k = Superquadric::kRot; k < Superquadric::kParamCount; ++k) {
    auto a = sq.params(), b = sq.params();
    a[k] += h;
    b[k] -= h;
    const double fd = (f(Superquadric::from_params(a, 0)) - f(Superquadric::from_params(b, 0))) / (2 * h);
    CHECK(g[k] == doctest::Approx(fd).epsilon(1e-5));
  }
  CHECK(g[Superquadric::kAlpha] == 0.0);
}

TEST_CASE("rigid transform of a primitive") {
  const Superquadric sq(0.8, {1, 0.1, 0.2, -0.1, 1, 0.3}, Vec3(0.1, -0.2, 0.3), Vec3(0.6, 0.9, 0.4), Vec2(0.7, 1.3),
                        3);
  const Mat3 r = rot6d_to_matrix({0.3, 1, 0, 1, 0, 0.5});
  const Vec3 t(1, 2, 3);
  const auto moved = sq.transformed(r, t);
  const auto tpl = build_icosphere(1);
  const auto m0 = deform(sq, tpl), m1 = deform(moved, tpl);
  for (std::size_t i = 0; i < tpl.vertex_count(); ++i)
    CHECK((m1.world_vertices[i] - (r * m0.world_vertices[i] + t)).norm() < 1e-12);
  CHECK(moved.id() == 3);
}

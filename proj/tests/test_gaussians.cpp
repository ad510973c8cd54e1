#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "doctest.h"
#include "sqb/gaussians.hpp"

using namespace sqb;

namespace {

Scene two_primitives() {
  Scene s;
  s.add(Superquadric(1.0, {1, 0.2, 0, 0, 1, 0.1}, Vec3(-0.6, 0, 0), Vec3(0.5, 0.7, 0.4), Vec2(0.6, 1.2), 0),
        PrimitiveRole::kObject, Vec3::Constant(0.5));
  s.add(Superquadric(0.9, {0.3, 1, 0, 1, 0, 0.2}, Vec3(0.7, 0.1, 0.2), Vec3(0.4, 0.4, 0.6), Vec2(1.0, 0.8), 0),
        PrimitiveRole::kObject, Vec3::Constant(0.5));
  return s;
}

Mat4 rigid(const Mat3& r, const Vec3& t) {
  Mat4 m = Mat4::Identity();
  m.block<3, 3>(0, 0) = r;
  m.block<3, 1>(0, 3) = t;
  return m;
}

// random local offsets and rotations
void perturb(GaussianScene& gs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& g : gs.gaussians()) {
    g.mu = Vec3(n(rng), n(rng), n(rng));
    g.quat = Vec4(1 + n(rng), n(rng), n(rng), n(rng)).normalized();
  }
}

}  // namespace

TEST_CASE("quaternion helpers") {
  const Mat3 r = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  const Vec4 q = rotation_to_quat(r);
  CHECK(q[0] >= 0.0);
  CHECK(q.norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((quat_to_rotation(q) - r).cwiseAbs().maxCoeff() < 1e-12);
  const Mat3 s = Eigen::AngleAxisd(-1.1, Vec3(0, 1, 1).normalized()).toRotationMatrix();
  CHECK((quat_to_rotation(quat_mul(rotation_to_quat(r), rotation_to_quat(s))) - r * s).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(sh_coefficients(0) == 1);
  CHECK(sh_coefficients(1) == 4);
  CHECK(sh_coefficients(3) == 16);
}

TEST_CASE("triangle frame is orthonormal and follows the first edge") {
  const TriangleFrame f = triangle_frame(Vec3(0, 0, 0), Vec3(2, 0, 0), Vec3(0, 1, 0), 0.5);
  CHECK((f.mu_t - Vec3(2.0 / 3, 1.0 / 3, 0)).norm() < 1e-15);
  CHECK((f.r_t - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(f.unit == 0.5);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  for (int i = 0; i < 50; ++i) {
    const TriangleFrame g = triangle_frame(Vec3(n(rng), n(rng), n(rng)), Vec3(n(rng), n(rng), n(rng)),
                                           Vec3(n(rng), n(rng), n(rng)));
    CHECK((g.r_t.transpose() * g.r_t - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(g.r_t.determinant() == doctest::Approx(1.0));
  }
}

TEST_CASE("local to global") {
  BoundGaussian g;
  g.mu = Vec3(0.3, -0.2, 0.5);
  g.quat = Vec4(0.9, 0.1, -0.3, 0.2).normalized();
  const TriangleFrame identity;
  const auto same = local_to_global(g, identity);
  CHECK((same.mu - g.mu).norm() == 0.0);
  CHECK((same.quat - g.quat).norm() < 1e-15);

  const TriangleFrame f = triangle_frame(Vec3(1, 0, 0), Vec3(1, 2, 0), Vec3(1, 0, 3), 2.0);
  const auto w = local_to_global(g, f);
  CHECK((w.mu - (f.r_t * (2.0 * g.mu) + f.mu_t)).norm() < 1e-14);
  CHECK((quat_to_rotation(w.quat) - f.r_t * quat_to_rotation(g.quat)).cwiseAbs().maxCoeff() < 1e-12);
  g.mu = Vec3::Zero();
  CHECK((local_to_global(g, f).mu - f.mu_t).norm() == 0.0);
}

TEST_CASE("init binds one Gaussian per face at the face centre") {
  const Scene s = two_primitives();
  const auto gs = init_bound_gaussians(s, 1, 1, Vec3(0.2, 0.4, 0.6));
  const auto faces = gs.icosphere().face_count();
  REQUIRE(gs.gaussians().size() == 2 * faces);
  for (const auto& g : gs.gaussians()) {
    CHECK(gs.binding_valid(g));
    CHECK(g.mu == Vec3::Zero());
    CHECK(g.quat == Vec4(1, 0, 0, 0));
    CHECK(g.opacity == 0.5);
    CHECK(g.scale.x() == g.scale.y());
    CHECK(g.sh.size() == 12);
    const auto& m = deform(s.at(g.id_k).sq, gs.icosphere());
    const auto& f = m.face_list()[g.id_t];
    const Vec3 centre = (m.world_vertices[f[0]] + m.world_vertices[f[1]] + m.world_vertices[f[2]]) / 3.0;
    CHECK((gs.world_pose(g).mu - centre).norm() < 1e-12);
    double edge = 0.0;
    for (int k = 0; k < 3; ++k) edge += (m.world_vertices[f[k]] - m.world_vertices[f[(k + 1) % 3]]).norm();
    CHECK(g.scale.x() == doctest::Approx(edge / 3));
  }
  // constant colour through the degree-0 coefficient
  const auto& g0 = gs.gaussians()[0];
  CHECK(0.5 + 0.28209479177387814 * g0.sh[1] == doctest::Approx(0.4));
  CHECK(g0.sh[5] == 0.0);
  CHECK(gs.units().size() == 2);
}

TEST_CASE("transparent primitives get no Gaussians") {
  Scene s = two_primitives();
  s.at(0).sq = s.at(0).sq.with_alpha(0.0);
  const auto gs = init_bound_gaussians(s, 1, 0, Vec3::Constant(0.5));
  for (const auto& g : gs.gaussians()) CHECK(g.id_k == 1);
}

TEST_CASE("densify keeps bindings and inherits ids") {
  auto gs = init_bound_gaussians(two_primitives(), 1, 1, Vec3::Constant(0.5));
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0, 1);
  DensifyConfig cfg;
  cfg.percent_dense = 0.2;  // about half the initial scales fall below
  for (int round = 0; round < 5; ++round) {
    const auto before = gs.gaussians();
    std::vector<double> stats(before.size());
    for (auto& s : stats) s = u(rng) < 0.3 ? 1e-3 : 0.0;
    const auto res = densify_and_prune(gs, stats, cfg, rng);
    CHECK(gs.gaussians().size() == before.size() + res.cloned + res.split - res.pruned);
    CHECK(res.source.size() == gs.gaussians().size());
    for (std::size_t i = 0; i < gs.gaussians().size(); ++i) {
      const auto& g = gs.gaussians()[i];
      CHECK(gs.binding_valid(g));
      if (res.source[i] >= 0) CHECK(g.mu == before[res.source[i]].mu);
    }
  }
  CHECK_THROWS_AS(densify_and_prune(gs, std::vector<double>{1.0}, cfg, rng), std::invalid_argument);
}

TEST_CASE("clone and split semantics") {
  auto gs = init_bound_gaussians(two_primitives(), 0, 0, Vec3::Constant(0.5));
  auto& g = gs.gaussians();
  g.resize(2);
  g[0].mu = Vec3(0.1, 0.2, 0.0);
  g[0].scale = Vec3::Constant(0.001);
  g[1].scale = Vec3::Constant(1.0);
  std::mt19937_64 rng(1);
  DensifyConfig cfg;
  const auto res = densify_and_prune(gs, std::vector<double>{1.0, 1.0}, cfg, rng);
  CHECK(res.cloned == 1);
  CHECK(res.split == 1);
  REQUIRE(g.size() == 4);
  CHECK(res.source == std::vector<std::ptrdiff_t>{0, -1, -1, -1});
  CHECK(g[1].mu == g[0].mu);
  CHECK(g[1].id_k == g[0].id_k);
  CHECK(g[1].id_t == g[0].id_t);
  for (int k = 2; k < 4; ++k) {
    CHECK((g[k].scale - Vec3::Constant(1.0 / 1.6)).norm() < 1e-15);
    CHECK(g[k].id_t == 1);
  }
  cfg.prune_opacity = 1.1;
  densify_and_prune(gs, std::vector<double>(4, 0.0), cfg, rng);
  CHECK(g.empty());
}

TEST_CASE("position regularizer") {
  const PosRegConfig cfg;
  std::vector<BoundGaussian> gs(1);
  gs[0].mu = Vec3(0.3, 0.4, 0.0);
  std::vector<Vec3> grad;
  CHECK(l_pos(gs, cfg, &grad) == 0.0);
  CHECK(grad[0] == Vec3::Zero());
  gs[0].mu = Vec3(0.0, 1.5, 0.0);
  CHECK(l_pos(gs, cfg) == doctest::Approx(1.0).epsilon(1e-15));

  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  gs.resize(6);
  for (auto& g : gs) g.mu = Vec3(n(rng), n(rng), n(rng));
  gs[2].mu = Vec3(0.1, 0.1, 0.1);
  l_pos(gs, cfg, &grad);
  const double h = 1e-6;
  for (std::size_t i = 0; i < gs.size(); ++i)
    for (int k = 0; k < 3; ++k) {
      auto a = gs, b = gs;
      a[i].mu[k] += h;
      b[i].mu[k] -= h;
      const double fd = (l_pos(a, cfg) - l_pos(b, cfg)) / (2 * h);
      if (gs[i].mu.norm() > cfg.epsilon_pos)
        CHECK(std::abs(grad[i][k] - fd) <= 1e-4 * std::max(std::abs(fd), 1e-12));
      else
        CHECK(grad[i][k] == 0.0);
    }
  double prev = -1.0;
  for (double r = 0.0; r <= 3.0; r += 0.1) {
    gs.assign(1, BoundGaussian{});
    gs[0].mu = Vec3(r, 0, 0);
    const double v = l_pos(gs, cfg);
    CHECK(v >= prev);
    prev = v;
  }
  CHECK_THROWS_AS(l_pos(gs, PosRegConfig{0.0}), ConfigError);
}

TEST_CASE("rigid edits move bound Gaussians rigidly") {
  auto gs = init_bound_gaussians(two_primitives(), 1, 1, Vec3::Constant(0.5));
  perturb(gs, 9);
  std::vector<GlobalPose> before;
  for (const auto& g : gs.gaussians()) before.push_back(gs.world_pose(g));
  const Vec3 centre = gs.scene().at(0).sq.trans();
  const Mat3 r = Eigen::AngleAxisd(std::numbers::pi / 2, Vec3(0, 0, 1)).toRotationMatrix();
  EditSpec spec;
  spec.edits.push_back({0, rigid(r, centre - r * centre)});
  apply_edit(gs, spec);
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto& g = gs.gaussians()[i];
    const auto now = gs.world_pose(g);
    if (g.id_k == 0) {
      CHECK((now.mu - (r * (before[i].mu - centre) + centre)).norm() < 1e-6);
      CHECK((quat_to_rotation(now.quat) - r * quat_to_rotation(before[i].quat)).cwiseAbs().maxCoeff() < 1e-6);
    } else {
      CHECK(now.mu == before[i].mu);
      CHECK(now.quat == before[i].quat);
    }
  }
}

TEST_CASE("identity edit and deletion") {
  auto gs = init_bound_gaussians(two_primitives(), 1, 1, Vec3::Constant(0.5));
  perturb(gs, 4);
  std::vector<GlobalPose> before;
  for (const auto& g : gs.gaussians()) before.push_back(gs.world_pose(g));
  EditSpec id;
  id.edits.push_back({1, Mat4::Identity()});
  apply_edit(gs, id);
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(gs.world_pose(gs.gaussians()[i]).mu == before[i].mu);
    CHECK(gs.world_pose(gs.gaussians()[i]).quat == before[i].quat);
  }
  EditSpec del;
  del.deletions = {0};
  apply_edit(gs, del);
  CHECK(gs.scene().find(0) == nullptr);
  CHECK_FALSE(gs.gaussians().empty());
  for (const auto& g : gs.gaussians()) CHECK(g.id_k == 1);

  EditSpec bad;
  bad.deletions = {42};
  CHECK_THROWS_AS(apply_edit(gs, bad), UnknownPrimitive);
  EditSpec shear;
  Mat4 m = Mat4::Identity();
  m(0, 1) = 0.5;
  shear.edits.push_back({1, m});
  CHECK_THROWS_AS(apply_edit(gs, shear), ConfigError);
}

TEST_CASE("edit file round trip") {
  const auto path = std::filesystem::temp_directory_path() / "sqb_edit_test.json";
  EditSpec spec;
  spec.edits.push_back({3, rigid(Eigen::AngleAxisd(0.4, Vec3::UnitY()).toRotationMatrix(), Vec3(1, 2, 3))});
  spec.deletions = {5, 6};
  write_edit_file(path, spec);
  const auto back = read_edit_file(path);
  REQUIRE(back.edits.size() == 1);
  CHECK(back.edits[0].first == 3);
  CHECK((back.edits[0].second - spec.edits[0].second).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(back.deletions == spec.deletions);
  {
    std::ofstream out(path);
    out << R"({"edits": [{"id": 1, "matrix": [1, 0, 0]}]})";
  }
  CHECK_THROWS_AS(read_edit_file(path), ConfigError);
  std::filesystem::remove(path);
}

TEST_CASE("splat ply layout") {
  const auto path = std::filesystem::temp_directory_path() / "sqb_splats_test.ply";
  const auto gs = init_bound_gaussians(two_primitives(), 0, 1, Vec3::Constant(0.5));
  write_splat_ply(path, gs);
  std::ifstream in(path, std::ios::binary);
  std::string line, header;
  int props = 0;
  while (std::getline(in, line) && line != "end_header") {
    header += line + "\n";
    if (line.rfind("property", 0) == 0) ++props;
  }
  CHECK(header.find("element vertex 40\n") != std::string::npos);
  CHECK(header.find("property int id_k\nproperty int id_t\n") != std::string::npos);
  CHECK(props == 3 + 3 + 4 + 1 + 3 + 9 + 2);
  const auto body_start = in.tellg();
  in.seekg(0, std::ios::end);
  CHECK(static_cast<long>(in.tellg() - body_start) == 40L * props * 4);
  // first record: world position equals the first face centre, ids at the end
  in.seekg(body_start);
  float xyz[3];
  in.read(reinterpret_cast<char*>(xyz), sizeof(xyz));
  const Vec3 w = gs.world_pose(gs.gaussians()[0]).mu;
  for (int k = 0; k < 3; ++k) CHECK(xyz[k] == static_cast<float>(w[k]));
  in.seekg(body_start + std::streamoff((props - 2) * 4));
  std::int32_t ids[2];
  in.read(reinterpret_cast<char*>(ids), sizeof(ids));
  CHECK(ids[0] == gs.gaussians()[0].id_k);
  CHECK(ids[1] == gs.gaussians()[0].id_t);
  std::filesystem::remove(path);
}

#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "sqb/splat.hpp"

using namespace sqb;

namespace {

Camera front_camera(int w, int h) {
  return Camera::look_at(Vec3(0, 0, -3), Vec3::Zero(), Vec3(0, 1, 0), 50.0, w, h);
}

// splats whose means project well inside the image
std::vector<Splat> random_splats(std::mt19937_64& rng, int n, int sh_degree) {
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Splat> out;
  for (int i = 0; i < n; ++i) {
    Splat s;
    s.mean = Vec3(0.8 * u(rng), 0.8 * u(rng), 0.5 * u(rng));
    s.quat = Vec4(1 + u(rng), u(rng), u(rng), u(rng));
    s.scale = Vec3(0.05 + 0.1 * (u(rng) + 1), 0.05 + 0.1 * (u(rng) + 1), 0.05 + 0.1 * (u(rng) + 1));
    s.opacity = 0.2 + 0.35 * (u(rng) + 1);
    s.sh.resize(3 * sh_coefficients(sh_degree));
    for (auto& c : s.sh) c = 0.4 * u(rng);
    out.push_back(std::move(s));
  }
  return out;
}

Splat isotropic(const Vec3& mean, double scale, double opacity, const Vec3& rgb) {
  Splat s;
  s.mean = mean;
  s.scale = Vec3::Constant(scale);
  s.opacity = opacity;
  s.sh.resize(3);
  for (int c = 0; c < 3; ++c) s.sh[c] = (rgb[c] - 0.5) / 0.28209479177387814;
  return s;
}

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace

TEST_CASE("tiled renderer matches the exhaustive oracle") {
  const Camera cam = front_camera(32, 32);
  for (int deg : {0, 1}) {
    std::mt19937_64 rng(100 + deg);
    const auto splats = random_splats(rng, 40, deg);
    SplatRenderConfig cfg;
    cfg.background = Vec3(0.1, 0.2, 0.3);
    cfg.tile_size = 8;
    const Image got = splat_render(splats, deg, cam, cfg);
    const Image ref = oracle::splat_render(splats, deg, cam, cfg.background, cfg.dilation);
    CHECK(max_abs_diff(got, ref) < 1e-5);
  }
}

TEST_CASE("opaque isotropic splat peaks at its pixel") {
  const Camera cam = front_camera(31, 31);
  // the principal point is the centre of pixel 15 only for odd sizes with cx = W/2
  const Vec3 p = Vec3(0.0, 0.0, 0.0);
  const Image img = splat_render(std::vector<Splat>{isotropic(p, 0.1, 1.0, Vec3::Ones())}, 0, cam, {});
  const Vec2 px = project_point(p, cam);
  int bx = 0, by = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if (img.at(x, y) > img.at(bx, by)) bx = x, by = y;
  CHECK(bx == static_cast<int>(std::floor(px.x())));
  CHECK(by == static_cast<int>(std::floor(px.y())));
}

TEST_CASE("an opaque front splat hides an identical one behind") {
  const Camera cam = front_camera(32, 32);
  const Vec3 centre = Vec3::Zero();
  const Vec2 px = project_point(centre, cam);
  const Vec3 m = cam.view.block<3, 3>(0, 0).transpose() *
                 (Vec3((std::floor(px.x()) + 0.5 - cam.cx) / cam.fx * 3.0, (std::floor(px.y()) + 0.5 - cam.cy) / cam.fy * 3.0,
                       3.0) -
                  cam.view.block<3, 1>(0, 3));
  for (double back_opacity : {0.0, 0.3, 1.0}) {
    const std::vector<Splat> s{isotropic(m, 0.2, 1.0, Vec3(1, 0, 0)), isotropic(m, 0.2, back_opacity, Vec3(0, 1, 0))};
    const Image img = splat_render(s, 0, cam, {});
    const int x = static_cast<int>(std::floor(px.x())), y = static_cast<int>(std::floor(px.y()));
    CHECK(img.at(x, y, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(img.at(x, y, 1) == 0.0);
  }
}

TEST_CASE("splat backward matches finite differences") {
  const Camera cam = front_camera(20, 16);
  std::mt19937_64 rng(7);
  auto splats = random_splats(rng, 6, 1);
  SplatRenderConfig cfg;
  Image w(20, 16, 3);
  std::normal_distribution<double> n;
  for (auto& v : w.data) v = n(rng);
  auto loss = [&](const std::vector<Splat>& s) {
    const Image img = splat_render(s, 1, cam, cfg);
    double acc = 0.0;
    for (std::size_t i = 0; i < img.data.size(); ++i) acc += w.data[i] * img.data[i];
    return acc;
  };
  SplatGrads g;
  splat_backward(splats, 1, cam, cfg, w, g);
  const double h = 1e-6;
  auto fd = [&](double& x) {
    const double keep = x;
    x = keep + h;
    const double a = loss(splats);
    x = keep - h;
    const double b = loss(splats);
    x = keep;
    return (a - b) / (2 * h);
  };
  auto close = [](double analytic, double numeric) {
    return std::abs(analytic - numeric) <= 1e-4 * std::max(1.0, std::abs(numeric));
  };
  for (std::size_t i = 0; i < splats.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      CHECK(close(g.mean[i][k], fd(splats[i].mean[k])));
      CHECK(close(g.scale[i][k], fd(splats[i].scale[k])));
    }
    for (int k = 0; k < 4; ++k) CHECK(close(g.quat[i][k], fd(splats[i].quat[k])));
    CHECK(close(g.opacity[i], fd(splats[i].opacity)));
    for (std::size_t k = 0; k < splats[i].sh.size(); ++k) CHECK(close(g.sh[i][k], fd(splats[i].sh[k])));
  }
}

TEST_CASE("alpha and group weight side outputs") {
  const Camera cam = front_camera(24, 24);
  std::mt19937_64 rng(11);
  const auto splats = random_splats(rng, 10, 0);
  Image alpha, group;
  std::vector<std::uint8_t> all(splats.size(), 1);
  SplatExtras ex;
  ex.alpha = &alpha;
  ex.group = &all;
  ex.group_weight = &group;
  SplatRenderConfig cfg;
  cfg.background = Vec3::Zero();
  const Image img = splat_render(splats, 0, cam, cfg, ex);
  REQUIRE(alpha.width == 24);
  double worst = 0.0;
  for (std::size_t i = 0; i < alpha.data.size(); ++i) {
    CHECK(alpha.data[i] >= 0.0);
    CHECK(alpha.data[i] <= 1.0);
    worst = std::max(worst, std::abs(alpha.data[i] - group.data[i]));
  }
  CHECK(worst < 1e-12);
  // with a white background the image lifts by exactly the transmittance
  cfg.background = Vec3::Ones();
  const Image lit = splat_render(splats, 0, cam, cfg);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x)
      CHECK(lit.at(x, y, 1) - img.at(x, y, 1) == doctest::Approx(1.0 - alpha.at(x, y)).epsilon(1e-9));
}

TEST_CASE("world splats follow the bound poses") {
  Scene s;
  s.add(Superquadric(1.0, {1, 0.3, 0, 0, 1, 0.2}, Vec3(0.1, 0, 0), Vec3(0.5, 0.6, 0.4), Vec2(0.8, 1.1), 0),
        PrimitiveRole::kObject, Vec3::Constant(0.5));
  const auto gs = init_bound_gaussians(s, 1, 1, Vec3::Constant(0.5));
  const auto splats = world_splats(gs);
  REQUIRE(splats.size() == gs.gaussians().size());
  for (std::size_t i = 0; i < splats.size(); ++i) {
    const auto pose = gs.world_pose(gs.gaussians()[i]);
    CHECK(splats[i].mean == pose.mu);
    CHECK(splats[i].quat == pose.quat);
    CHECK(splats[i].scale == gs.gaussians()[i].scale);
  }
}

TEST_CASE("splat config validation") {
  SplatRenderConfig cfg;
  cfg.tile_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

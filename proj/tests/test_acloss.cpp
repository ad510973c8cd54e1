#include <cmath>

#include "doctest.h"
#include "sqb/acloss.hpp"

using namespace sqb;

namespace {

// normalized 32x32 Gaussian bump
std::vector<double> bump(double cx, double cy) {
  std::vector<double> g(32 * 32);
  double s = 0.0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) s += g[y * 32 + x] = std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / 8.0);
  for (auto& v : g) v /= s;
  return g;
}

AttentionMap mix(std::initializer_list<std::pair<double, std::vector<double>>> parts) {
  AttentionMap m;
  m.width = m.height = 32;
  m.grid.assign(32 * 32, 0.0f);
  std::vector<double> acc(32 * 32, 0.0);
  for (const auto& [w, g] : parts)
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * g[i];
  for (std::size_t i = 0; i < acc.size(); ++i) m.grid[i] = static_cast<float>(acc[i]);
  return m;
}

PromptSet prompts(std::vector<Vec2> pts) {
  PromptSet p;
  p.points = std::move(pts);
  for (std::size_t i = 0; i < p.points.size(); ++i) p.vertices.push_back(static_cast<std::int32_t>(i));
  p.box = PixelBox{0, 0, 32, 32};
  return p;
}

// Five prompts: p1..p3 share a part (p1 and p3 symmetric about p2 in feature
// space), p4 and p5 share another part.
struct Fixture {
  std::vector<AttentionMap> maps;
  PromptSet ps;
  ACOptions opts{2};
  Fixture() {
    const auto a = bump(8, 8), b = bump(10, 8), c = bump(6, 8), d = bump(24, 24), e = bump(26, 24);
    maps = {mix({{0.8, a}, {0.15, b}, {0.05, c}}), mix({{0.8, a}, {0.1, b}, {0.1, c}}),
            mix({{0.8, a}, {0.05, b}, {0.15, c}}), mix({{1.0, d}}), mix({{0.9, d}, {0.1, e}})};
    ps = prompts({Vec2(4, 9), Vec2(10, 10), Vec2(6, 15), Vec2(13, 14), Vec2(10, 12.5)});
  }
};

}  // namespace

TEST_CASE("centering loss on the five-prompt fixture") {
  const Fixture f;
  const auto r = ac_loss_from_maps(f.ps, f.maps, f.opts);
  CHECK(r.clusters.cluster_count == 2);
  CHECK(r.clusters.size_of(r.major) == 3);
  CHECK(r.centroid_index == 1);
  CHECK(r.outliers == std::vector<int>{3, 4});
  // |(13,14) - (10,10)| + |(10,12.5) - (10,10)| = 5 + 2.5
  CHECK(r.loss == doctest::Approx(7.5).epsilon(1e-12));
  CHECK(std::abs(r.loss - 7.5) < 1e-9);
}

TEST_CASE("one cluster gives zero loss") {
  const Fixture f;
  const std::vector<AttentionMap> same(5, f.maps[1]);
  const auto r = ac_loss_from_maps(f.ps, same, f.opts);
  CHECK(r.loss == 0.0);
  CHECK(r.outliers.empty());
}

TEST_CASE("duplicating the major maps leaves the loss unchanged") {
  // identical major maps so that duplicates cannot form sub-clusters of their own
  Fixture f;
  f.maps[0] = f.maps[2] = f.maps[1];
  const auto base = ac_loss_from_maps(f.ps, f.maps, f.opts);
  auto maps = f.maps;
  auto ps = f.ps;
  for (int i = 0; i < 3; ++i) {
    maps.push_back(f.maps[i]);
    ps.points.push_back(f.ps.points[i]);
    ps.vertices.push_back(static_cast<std::int32_t>(ps.vertices.size()));
  }
  const auto dup = ac_loss_from_maps(ps, maps, f.opts);
  CHECK(dup.clusters.size_of(dup.major) == 6);
  CHECK(dup.loss == base.loss);
  CHECK(base.loss > 0.0);
}

TEST_CASE("total sums primitives and averages views") {
  const Fixture f;
  const auto dirty = ac_loss_from_maps(f.ps, f.maps, f.opts);
  const std::vector<AttentionMap> same(5, f.maps[1]);
  const auto clean = ac_loss_from_maps(f.ps, same, f.opts);
  const std::vector<std::vector<ACResult>> one_view{{dirty, clean}};
  CHECK(ac_loss_total(one_view) == doctest::Approx(7.5).epsilon(1e-12));
  const std::vector<std::vector<ACResult>> all_clean{{clean, clean}, {clean}};
  CHECK(ac_loss_total(all_clean) == 0.0);
  const std::vector<std::vector<ACResult>> two_views{{dirty}, {clean}};
  CHECK(ac_loss_total(two_views) == doctest::Approx(3.75).epsilon(1e-12));
}

TEST_CASE("doubling the resolution doubles the pixel loss") {
  const Camera cam = Camera::look_at(Vec3(0, 0, -4), Vec3::Zero(), Vec3(0, 1, 0), 40.0, 32, 32);
  const Camera big = cam.scaled(2.0);
  const Vec3 world[5] = {Vec3(-0.5, -0.3, 0), Vec3(0.1, 0.2, 0.1), Vec3(-0.2, 0.4, -0.1), Vec3(0.6, 0.5, 0.2),
                         Vec3(0.3, -0.4, 0)};
  Fixture f;
  PromptSet small_ps = f.ps, big_ps = f.ps;
  for (int i = 0; i < 5; ++i) {
    small_ps.points[i] = project_point(world[i], cam);
    big_ps.points[i] = project_point(world[i], big);
  }
  const auto a = ac_loss_from_maps(small_ps, f.maps, f.opts);
  const auto b = ac_loss_from_maps(big_ps, f.maps, f.opts);
  CHECK(a.loss > 0.0);
  CHECK(b.loss == doctest::Approx(2.0 * a.loss).epsilon(1e-12));
}

TEST_CASE("differentiable loss pulls outliers toward the centroid") {
  const Fixture f;
  const auto r = ac_loss_from_maps(f.ps, f.maps, f.opts);
  ad::Tape tape;
  std::vector<double> flat;
  for (const auto& p : f.ps.points) flat.insert(flat.end(), {p.x(), p.y()});
  const ad::Var pts = tape.leaf(flat);
  const ad::Var loss = ac_loss_var(pts, r);
  CHECK(loss.scalar() == doctest::Approx(r.loss).epsilon(1e-12));
  tape.backward(loss);
  const auto& g = pts.grad();
  // unit vectors away from the centroid (10, 10) at the outliers, zero elsewhere
  CHECK(g[6] == doctest::Approx(0.6));
  CHECK(g[7] == doctest::Approx(0.8));
  CHECK(g[8] == doctest::Approx(0.0));
  CHECK(g[9] == doctest::Approx(1.0));
  for (int i = 0; i < 6; ++i) CHECK(g[i] == 0.0);
}

TEST_CASE("cluster centroid ties keep the lowest index") {
  ClusterResult c;
  c.labels = {0, 0, 0};
  c.probabilities = {1, 1, 1};
  c.cluster_count = 1;
  const std::vector<std::vector<double>> feats{{1.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}};
  CHECK(cluster_centroid(c, feats, 0) == 0);
}

#include <cmath>

#include "doctest.h"
#include "json.hpp"
#include "sqb/structure.hpp"

using namespace sqb;

namespace {

const Rot6 kIdentity{1, 0, 0, 0, 1, 0};

// Two clusters of two prompts each. The cluster centroids sit at (0,0) and
// (30,40), 50 px apart, inside a 36x48 box with a diagonal of 60.
PrimitiveViewEvidence two_cluster_view(int view) {
  PrimitiveViewEvidence v;
  v.view = view;
  v.prompts.points = {Vec2(0, 0), Vec2(1, 0), Vec2(30, 40), Vec2(31, 40)};
  v.prompts.vertices = {0, 1, 2, 3};
  v.prompts.box = PixelBox{0, 0, 36, 48};
  v.ac.clusters.labels = {0, 0, 1, 1};
  v.ac.clusters.probabilities = {1, 1, 1, 1};
  v.ac.clusters.cluster_count = 2;
  v.ac.features = {{1, 0}, {1, 0}, {0, 1}, {0, 1}};
  return v;
}

PrimitiveViewEvidence one_cluster_view(int view) {
  auto v = two_cluster_view(view);
  v.ac.clusters.labels = {0, 0, 0, 0};
  v.ac.clusters.cluster_count = 1;
  return v;
}

PrimitiveMesh four_vertices() {
  PrimitiveMesh m;
  m.world_vertices = {Vec3(-1, 0, 0), Vec3(-0.9, 0, 0), Vec3(1, 0, 0), Vec3(1.1, 0, 0)};
  m.owner_id = 7;
  return m;
}

LabelImage two_parts() {
  LabelImage m;
  m.width = m.height = 32;
  m.labels.assign(32 * 32, 0);
  for (int y = 6; y < 26; ++y) {
    for (int x = 3; x < 13; ++x) m.labels[y * 32 + x] = 1;
    for (int x = 19; x < 29; ++x) m.labels[y * 32 + x] = 2;
  }
  return m;
}

PromptSet set_of(PrimitiveId owner, std::vector<Vec2> pts, PixelBox box) {
  PromptSet s;
  s.owner_id = owner;
  s.points = std::move(pts);
  for (std::size_t i = 0; i < s.points.size(); ++i) s.vertices.push_back(static_cast<std::int32_t>(i));
  s.box = box;
  return s;
}

}  // namespace

TEST_CASE("farthest centroids") {
  const auto v = two_cluster_view(0);
  const auto pair = farthest_centroids(v.prompts, v.ac);
  REQUIRE(pair.has_value());
  CHECK(pair->a == 0);
  CHECK(pair->b == 2);
  CHECK(pair->distance == doctest::Approx(50.0));
  CHECK_FALSE(farthest_centroids(v.prompts, one_cluster_view(0).ac).has_value());
}

TEST_CASE("split fires above beta times the box diagonal") {
  const auto mesh = four_vertices();
  const std::vector<PrimitiveViewEvidence> one{two_cluster_view(0)};
  const auto d = check_split(mesh, one, 0.7);
  REQUIRE(d.has_value());
  CHECK(d->target_id == 7);
  CHECK(d->threshold == doctest::Approx(42.0));
  CHECK(d->centroid_distance == doctest::Approx(50.0));
  CHECK((d->anchor_a - Vec3(-1, 0, 0)).norm() == 0.0);
  CHECK((d->anchor_b - Vec3(1, 0, 0)).norm() == 0.0);
  CHECK_FALSE(check_split(mesh, one, 0.9).has_value());
}

TEST_CASE("split needs a strict majority of views") {
  const auto mesh = four_vertices();
  const std::vector<PrimitiveViewEvidence> tie{two_cluster_view(0), one_cluster_view(1)};
  CHECK_FALSE(check_split(mesh, tie, 0.7).has_value());
  const std::vector<PrimitiveViewEvidence> most{two_cluster_view(0), one_cluster_view(1), two_cluster_view(2)};
  const auto d = check_split(mesh, most, 0.7);
  REQUIRE(d.has_value());
  CHECK(d->view == 0);
  CHECK_FALSE(check_split(mesh, std::vector<PrimitiveViewEvidence>{}, 0.7).has_value());
}

TEST_CASE("apply split places children at the anchors") {
  const auto tpl = build_icosphere(2);
  Scene scene;
  const PrimitiveId parent =
      scene.add(Superquadric(0.8, {1, 0.2, 0, 0, 1, 0.1}, Vec3(0.3, 0, 0), Vec3(1.0, 0.5, 0.4), Vec2(0.4, 1.2), 0),
                PrimitiveRole::kObject, Vec3(0.2, 0.4, 0.6));
  SplitDecision d;
  d.target_id = parent;
  d.anchor_a = Vec3(-0.7, 0.1, 0.0);
  d.anchor_b = Vec3(1.2, -0.1, 0.05);
  const auto [a, b] = apply_split(scene, d, tpl);
  CHECK(scene.at(parent).sq.alpha() == 0.0);
  for (auto [id, anchor] : {std::pair{a, d.anchor_a}, std::pair{b, d.anchor_b}}) {
    const auto& c = scene.at(id);
    CHECK((deform(c.sq, tpl).centroid() - anchor).norm() < 1e-6);
    CHECK((c.sq.scale() - 0.4 * Vec3(1.0, 0.5, 0.4)).norm() < 1e-12);
    CHECK(c.sq.alpha() == 0.8);
    CHECK((c.sq.eps() - Vec2(0.4, 1.2)).norm() < 1e-12);
    CHECK((c.color - Vec3(0.2, 0.4, 0.6)).norm() == 0.0);
  }
  CHECK(a != b);
  CHECK(a > parent);
  CHECK_THROWS_AS(apply_split(scene, d, tpl), InvalidDecision);
}

TEST_CASE("fuse fires for prompts on the same part only") {
  const SyntheticOracle oracle({two_parts()}, 2.0);
  const std::vector<FuseCandidate> cands{{0, Vec3(0, 0, 0)}, {1, Vec3(0.5, 0, 0)}};
  const ACOptions opts{3};

  ViewPromptSets same;
  same.sets = {set_of(0, {Vec2(5.5, 8.5), Vec2(6.5, 12.5), Vec2(8.5, 10.5)}, PixelBox{3, 6, 13, 16}),
               set_of(1, {Vec2(5.5, 20.5), Vec2(9.5, 22.5), Vec2(10.5, 18.5)}, PixelBox{3, 16, 13, 26})};
  const auto d = check_fuse(cands, std::vector<ViewPromptSets>{same}, oracle, opts);
  REQUIRE(d.has_value());
  CHECK(d->id_a == 0);
  CHECK(d->id_b == 1);
  CHECK(d->checked_views == 1);
  CHECK(d->cluster_count_after_union == 1);
  REQUIRE(d->merged_boxes.size() == 1);
  CHECK(d->merged_boxes[0].y0 == 6);
  CHECK(d->merged_boxes[0].y1 == 26);

  ViewPromptSets apart;
  apart.sets = {set_of(0, {Vec2(5.5, 8.5), Vec2(6.5, 12.5), Vec2(8.5, 10.5)}, PixelBox{3, 6, 13, 26}),
                set_of(1, {Vec2(20.5, 8.5), Vec2(24.5, 12.5), Vec2(26.5, 20.5)}, PixelBox{19, 6, 29, 26})};
  CHECK_FALSE(check_fuse(cands, std::vector<ViewPromptSets>{apart}, oracle, opts).has_value());
  // one agreeing view does not outvote a disagreeing one
  CHECK_FALSE(check_fuse(cands, std::vector<ViewPromptSets>{same, apart}, oracle, opts).has_value());
  CHECK_FALSE(check_fuse(std::span(cands).first(1), std::vector<ViewPromptSets>{same}, oracle, opts).has_value());
}

TEST_CASE("apply fuse averages parameters") {
  Scene scene;
  const PrimitiveId a = scene.add(Superquadric(0.6, kIdentity, Vec3(-1, 0, 0), Vec3(1, 1, 1), Vec2(0.5, 1.0), 0),
                                  PrimitiveRole::kObject, Vec3(0, 0, 0));
  const PrimitiveId b = scene.add(Superquadric(1.0, kIdentity, Vec3(1, 2, 0), Vec3(3, 1, 1), Vec2(1.5, 1.0), 0),
                                  PrimitiveRole::kObject, Vec3(1, 1, 1));
  FuseDecision d;
  d.id_a = a;
  d.id_b = b;
  int warmed = 0;
  const PrimitiveId f = apply_fuse(scene, d, 100, [&](Scene&, PrimitiveId id, int xi) {
    CHECK(id == 2);
    warmed = xi;
  });
  CHECK(warmed == 100);
  const auto& fused = scene.at(f).sq;
  CHECK((fused.scale() - Vec3(2, 1, 1)).norm() < 1e-12);
  CHECK((fused.trans() - Vec3(0, 1, 0)).norm() < 1e-12);
  CHECK((fused.eps() - Vec2(1.0, 1.0)).norm() < 1e-12);
  CHECK(fused.alpha() == doctest::Approx(0.8));
  CHECK((scene.at(f).color - Vec3::Constant(0.5)).norm() < 1e-12);
  CHECK(scene.at(a).sq.alpha() == 0.0);
  CHECK(scene.at(b).sq.alpha() == 0.0);
  CHECK(scene.active_object_count() == 1);
  CHECK_THROWS_AS(apply_fuse(scene, d, 0), InvalidDecision);
}

TEST_CASE("prune removes strictly transparent primitives") {
  Scene scene;
  for (double a : {0.05, 0.5, 0.09, 0.1})
    scene.add(Superquadric(a, kIdentity, Vec3::Zero(), Vec3::Ones(), Vec2(1, 1), 0), PrimitiveRole::kObject,
              Vec3::Zero());
  const auto removed = prune_transparent(scene, 0.1);
  CHECK(removed == std::vector<PrimitiveId>{0, 2});
  REQUIRE(scene.primitives().size() == 2);
  CHECK(scene.primitives()[0].sq.alpha() == 0.5);
  CHECK(scene.primitives()[1].sq.alpha() == 0.1);
  // ids are never reused
  CHECK(scene.add(Superquadric(1.0, kIdentity, Vec3::Zero(), Vec3::Ones(), Vec2(1, 1), 0), PrimitiveRole::kObject,
                  Vec3::Zero()) == 4);
}

TEST_CASE("event log lines") {
  EventLog log;
  const std::vector<PrimitiveId> ids{3, 4};
  log.record(60, "split", ids, R"({"distance":50.0})");
  log.record(61, "prune", std::vector<PrimitiveId>{2}, "");
  CHECK(log.count("split") == 1);
  CHECK(log.count("fuse") == 0);
  const auto j = nlohmann::json::parse(log.lines()[0]);
  CHECK(j["iter"] == 60);
  CHECK(j["event"] == "split");
  CHECK(j["ids"] == nlohmann::json::array({3, 4}));
  CHECK(j["metrics"]["distance"] == 50.0);
  CHECK(log.lines()[1] == R"({"iter":61,"event":"prune","ids":[2],"metrics":{}})");
}

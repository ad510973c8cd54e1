#include "sqb/structure.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "json.hpp"

namespace sqb {

std::optional<CentroidPair> farthest_centroids(const PromptSet& prompts, const ACResult& ac) {
  if (ac.clusters.cluster_count < 2) return std::nullopt;
  std::vector<int> centre(ac.clusters.cluster_count);
  for (int c = 0; c < ac.clusters.cluster_count; ++c) centre[c] = cluster_centroid(ac.clusters, ac.features, c);
  CentroidPair best;
  best.distance = -1.0;
  for (int i = 0; i < ac.clusters.cluster_count; ++i)
    for (int j = i + 1; j < ac.clusters.cluster_count; ++j) {
      const double d = (prompts.points[centre[i]] - prompts.points[centre[j]]).norm();
      if (d > best.distance) best = {centre[i], centre[j], d};
    }
  return best;
}

std::optional<SplitDecision> check_split(const PrimitiveMesh& mesh, std::span<const PrimitiveViewEvidence> views,
                                         double beta) {
  if (views.empty()) return std::nullopt;
  std::optional<SplitDecision> pick;
  double pick_ratio = 0.0;
  std::size_t votes = 0;
  for (const auto& v : views) {
    const auto pair = farthest_centroids(v.prompts, v.ac);
    if (!pair) continue;
    const double threshold = beta * v.prompts.box.diagonal();
    if (!(pair->distance > threshold)) continue;
    ++votes;
    const double ratio = threshold > 0.0 ? pair->distance / threshold : std::numeric_limits<double>::infinity();
    if (!pick || ratio > pick_ratio) {
      SplitDecision d;
      d.target_id = mesh.owner_id;
      d.anchor_a = mesh.world_vertices[v.prompts.vertices[pair->a]];
      d.anchor_b = mesh.world_vertices[v.prompts.vertices[pair->b]];
      d.centroid_distance = pair->distance;
      d.threshold = threshold;
      d.view = v.view;
      pick = d;
      pick_ratio = ratio;
    }
  }
  if (2 * votes <= views.size()) return std::nullopt;
  return pick;
}

Vec3 anchored_translation(const Vec3& anchor, const Mat3& rotation, const Vec3& scale, const Vec2& eps,
                          const IcosphereTemplate& tpl) {
  const Vec3 mean_local = mean_unit_local_point(eps, tpl).cwiseProduct(scale);
  return anchor - rotation * mean_local;
}

std::pair<PrimitiveId, PrimitiveId> apply_split(Scene& scene, const SplitDecision& d, const IcosphereTemplate& tpl,
                                                double eps_factor) {
  Primitive* parent = scene.find(d.target_id);
  if (parent == nullptr || parent->sq.alpha() <= 0.0)
    throw InvalidDecision("split target " + std::to_string(d.target_id) + " is no longer active");
  const Superquadric p = parent->sq;
  const Vec3 scale = 0.4 * p.scale();
  const Vec2 eps = eps_factor * p.eps();
  const Primitive proto = *parent;
  PrimitiveId ids[2];
  const Vec3 anchors[2] = {d.anchor_a, d.anchor_b};
  for (int k = 0; k < 2; ++k) {
    const Vec2 eps_c(std::clamp(eps.x(), Superquadric::kEpsMin, Superquadric::kEpsMax),
                     std::clamp(eps.y(), Superquadric::kEpsMin, Superquadric::kEpsMax));
    const Vec3 t = anchored_translation(anchors[k], p.rotation(), scale, eps_c, tpl);
    ids[k] = scene.add(Superquadric(p.alpha(), p.rot6(), t, scale, eps_c, 0), proto.role, proto.color);
  }
  scene.at(d.target_id).sq = p.with_alpha(0.0);
  return {ids[0], ids[1]};
}

std::optional<FuseDecision> check_fuse(std::span<const FuseCandidate> candidates, std::span<const ViewPromptSets> views,
                                       const AttentionProvider& provider, const ACOptions& opts) {
  if (candidates.size() < 2) return std::nullopt;
  struct Pair {
    double dist;
    PrimitiveId a, b;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    std::size_t nn = i;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      if (j == i) continue;
      const double d = (candidates[i].centroid - candidates[j].centroid).norm();
      if (d < best || (d == best && candidates[j].id < candidates[nn].id)) {
        best = d;
        nn = j;
      }
    }
    const PrimitiveId a = std::min(candidates[i].id, candidates[nn].id);
    const PrimitiveId b = std::max(candidates[i].id, candidates[nn].id);
    if (std::none_of(pairs.begin(), pairs.end(), [&](const Pair& p) { return p.a == a && p.b == b; }))
      pairs.push_back({best, a, b});
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
    if (x.dist != y.dist) return x.dist < y.dist;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });

  for (const Pair& pr : pairs) {
    FuseDecision d;
    d.id_a = pr.a;
    d.id_b = pr.b;
    bool ok = true;
    for (const auto& view : views) {
      const PromptSet* sa = nullptr;
      const PromptSet* sb = nullptr;
      for (const auto& s : view.sets) {
        if (s.owner_id == pr.a) sa = &s;
        if (s.owner_id == pr.b) sb = &s;
      }
      if (!sa || !sb || sa->points.empty() || sb->points.empty()) continue;
      if (static_cast<int>(sa->size() + sb->size()) < opts.min_cluster_size) continue;
      const PixelBox box = PixelBox::merged(sa->box, sb->box);
      std::vector<AttentionMap> maps;
      for (const auto* s : {sa, sb})
        for (const Vec2& p : s->points) maps.push_back(attention_map(provider, view.embedding, p, box));
      const ClusterResult cr = hdbscan(maps, opts.min_cluster_size);
      ++d.checked_views;
      d.merged_boxes.push_back(box);
      d.cluster_count_after_union = std::max(d.cluster_count_after_union, cr.cluster_count);
      const bool noise = std::any_of(cr.labels.begin(), cr.labels.end(),
                                     [](int l) { return l == ClusterResult::kNoise; });
      if (cr.cluster_count != 1 || noise) {
        ok = false;
        break;
      }
    }
    if (ok && d.checked_views > 0) return d;
  }
  return std::nullopt;
}

PrimitiveId apply_fuse(Scene& scene, const FuseDecision& d, int xi, const FuseWarmup& warmup) {
  Primitive* a = scene.find(d.id_a);
  Primitive* b = scene.find(d.id_b);
  if (!a || !b || a->sq.alpha() <= 0.0 || b->sq.alpha() <= 0.0 || d.id_a == d.id_b)
    throw InvalidDecision("fuse sources " + std::to_string(d.id_a) + "," + std::to_string(d.id_b) +
                          " are not both active");
  const auto pa = a->sq.params();
  const auto pb = b->sq.params();
  Superquadric::Params pm;
  for (std::size_t i = 0; i < pm.size(); ++i) pm[i] = 0.5 * (pa[i] + pb[i]);
  Superquadric fused = [&] {
    try {
      return Superquadric::from_params(pm, 0);
    } catch (const DegenerateRotation&) {
      // opposite orientations cancel; keep the first source's rotation
      std::copy(pa.begin() + Superquadric::kRot, pa.begin() + Superquadric::kTrans, pm.begin() + Superquadric::kRot);
      return Superquadric::from_params(pm, 0);
    }
  }();
  const Vec3 color = 0.5 * (a->color + b->color);
  const PrimitiveRole role = a->role;
  a->sq = a->sq.with_alpha(0.0);
  b->sq = b->sq.with_alpha(0.0);
  const PrimitiveId id = scene.add(fused, role, color);
  if (warmup && xi > 0) warmup(scene, id, xi);
  return id;
}

std::vector<PrimitiveId> prune_transparent(Scene& scene, double threshold) {
  std::vector<PrimitiveId> removed;
  for (const auto& p : scene.primitives())
    if (p.sq.alpha() < threshold) removed.push_back(p.sq.id());
  for (PrimitiveId id : removed) scene.erase(id);
  return removed;
}

EventLog::EventLog(const std::filesystem::path& path) : out_(path) {
  if (!out_) throw Error("cannot open event log " + path.string());
}

void EventLog::record(int iter, const std::string& event, std::span<const PrimitiveId> ids,
                      const std::string& metrics_json) {
  nlohmann::ordered_json j;
  j["iter"] = iter;
  j["event"] = event;
  j["ids"] = std::vector<PrimitiveId>(ids.begin(), ids.end());
  j["metrics"] = metrics_json.empty() ? nlohmann::ordered_json::object() : nlohmann::ordered_json::parse(metrics_json);
  const std::string line = j.dump();
  lines_.push_back(line);
  events_.push_back(event);
  if (out_.is_open()) {
    out_ << line << '\n';
    out_.flush();
  }
}

std::size_t EventLog::count(const std::string& event) const {
  return static_cast<std::size_t>(std::count(events_.begin(), events_.end(), event));
}

}  // namespace sqb

#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "sqb/acloss.hpp"
#include "sqb/scene.hpp"

namespace sqb {

/// Prompts and centering result of one primitive in one view.
struct PrimitiveViewEvidence {
  int view = 0;
  PromptSet prompts;
  ACResult ac;
};

struct SplitDecision {
  PrimitiveId target_id = 0;
  Vec3 anchor_a = Vec3::Zero();
  Vec3 anchor_b = Vec3::Zero();
  double centroid_distance = 0.0;
  double threshold = 0.0;
  int view = 0;
};

/// Farthest pair of cluster centroids in one view, or nullopt with < 2 clusters.
struct CentroidPair {
  int a = 0;  // prompt indices
  int b = 0;
  double distance = 0.0;
};
std::optional<CentroidPair> farthest_centroids(const PromptSet& prompts, const ACResult& ac);

/// Fires when a strict majority of the views vote for a split. The reported
/// decision comes from the voting view with the largest distance/threshold.
std::optional<SplitDecision> check_split(const PrimitiveMesh& mesh, std::span<const PrimitiveViewEvidence> views,
                                         double beta);

/// Two children at the anchors with 0.4x scale; parent opacity becomes 0.
/// `eps_factor` scales the inherited shape exponents (1 keeps them).
std::pair<PrimitiveId, PrimitiveId> apply_split(Scene& scene, const SplitDecision& d, const IcosphereTemplate& tpl,
                                                double eps_factor = 1.0);

/// Child translation that puts the deformed-mesh centroid at `anchor`.
Vec3 anchored_translation(const Vec3& anchor, const Mat3& rotation, const Vec3& scale, const Vec2& eps,
                          const IcosphereTemplate& tpl);

struct FuseDecision {
  PrimitiveId id_a = 0;
  PrimitiveId id_b = 0;
  std::vector<PixelBox> merged_boxes;  // per checked view
  int cluster_count_after_union = 0;
  int checked_views = 0;
};

struct FuseCandidate {
  PrimitiveId id = 0;
  Vec3 centroid = Vec3::Zero();  // mean deformed vertex
};

/// Prompt sets of one view, any order.
struct ViewPromptSets {
  int view = 0;
  ImageEmbedding embedding;
  std::vector<PromptSet> sets;
};

/// Pairs each candidate with its nearest neighbour and tests the pairs in
/// order of distance. A pair fires when every view where both sources have
/// prompts (and the union reaches min_cluster_size) yields exactly one cluster
/// without noise.
std::optional<FuseDecision> check_fuse(std::span<const FuseCandidate> candidates, std::span<const ViewPromptSets> views,
                                       const AttentionProvider& provider, const ACOptions& opts = {});

/// Steps the fused primitive alone; receives the scene and its id.
using FuseWarmup = std::function<void(Scene&, PrimitiveId, int)>;

/// Parameter mean of both sources, sources made transparent, then `warmup`
/// runs for xi steps. Returns the fused id.
PrimitiveId apply_fuse(Scene& scene, const FuseDecision& d, int xi, const FuseWarmup& warmup = {});

/// Removes primitives with alpha strictly below threshold; returns their ids.
std::vector<PrimitiveId> prune_transparent(Scene& scene, double threshold);

/// JSON-lines log of structural events.
class EventLog {
 public:
  EventLog() = default;
  explicit EventLog(const std::filesystem::path& path);

  void record(int iter, const std::string& event, std::span<const PrimitiveId> ids, const std::string& metrics_json);
  const std::vector<std::string>& lines() const { return lines_; }
  std::size_t count(const std::string& event) const;

 private:
  std::ofstream out_;
  std::vector<std::string> lines_;
  std::vector<std::string> events_;
};

}  // namespace sqb

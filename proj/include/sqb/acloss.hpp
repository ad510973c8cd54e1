#pragma once

#include <span>
#include <vector>

#include "sqb/autodiff.hpp"
#include "sqb/rasterizer.hpp"
#include "sqb/semantics.hpp"

namespace sqb {

struct ACOptions {
  int min_cluster_size = 3;
};

struct ACResult {
  double loss = 0.0;
  int major = 0;             // label of the major cluster
  int centroid_index = 0;    // prompt index
  Vec2 centroid_point = Vec2::Zero();
  std::vector<int> outliers;  // prompt indices outside the major cluster
  ClusterResult clusters;
  std::vector<std::vector<double>> features;  // per prompt, used for clustering
};

/// Member of `label` whose features are nearest to the probability-weighted
/// mean of the cluster's features. Ties keep the lowest prompt index.
int cluster_centroid(const ClusterResult& clusters, std::span<const std::vector<double>> features, int label);

/// Centering loss for one primitive in one view from already-fetched maps.
ACResult ac_loss_from_maps(const PromptSet& prompts, std::span<const AttentionMap> maps, const ACOptions& opts = {});
/// Queries one map per prompt point under the prompt box, then as above.
ACResult ac_loss_for_primitive(const PromptSet& prompts, const ImageEmbedding& h, const AttentionProvider& provider,
                               const ACOptions& opts = {});

/// Differentiable form: sum over outliers of |p_o - c| with the centroid held
/// constant. `points` holds 2 coordinates per prompt.
ad::Var ac_loss_var(ad::Var points, const ACResult& result);

/// Sum over primitives, mean over views.
double ac_loss_total(std::span<const std::vector<ACResult>> per_view);

}  // namespace sqb

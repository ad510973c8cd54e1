#include "sqb/acloss.hpp"

#include <cmath>
#include <limits>

namespace sqb {

int cluster_centroid(const ClusterResult& clusters, std::span<const std::vector<double>> features, int label) {
  std::vector<int> members;
  for (std::size_t i = 0; i < clusters.labels.size(); ++i)
    if (clusters.labels[i] == label) members.push_back(static_cast<int>(i));
  if (members.empty()) throw std::invalid_argument("cluster_centroid: empty cluster");
  const std::size_t dim = features[members.front()].size();
  std::vector<double> mean(dim, 0.0);
  for (int m : members)
    for (std::size_t k = 0; k < dim; ++k) mean[k] += clusters.probabilities[m] * features[m][k];
  for (double& v : mean) v /= static_cast<double>(members.size());
  int best = members.front();
  double best_d = std::numeric_limits<double>::infinity();
  for (int m : members) {
    double d = 0.0;
    for (std::size_t k = 0; k < dim; ++k) d += (features[m][k] - mean[k]) * (features[m][k] - mean[k]);
    if (d < best_d) {
      best_d = d;
      best = m;
    }
  }
  return best;
}

ACResult ac_loss_from_maps(const PromptSet& prompts, std::span<const AttentionMap> maps, const ACOptions& opts) {
  if (prompts.points.empty()) throw std::invalid_argument("ac_loss: empty prompt set");
  if (maps.size() != prompts.points.size()) throw std::invalid_argument("ac_loss: one map per prompt required");
  ACResult r;
  r.features.reserve(maps.size());
  for (const auto& m : maps) r.features.push_back(map_features(m));
  r.clusters = hdbscan_distances(pairwise_l2(r.features), opts.min_cluster_size);

  int major = -1;
  std::size_t major_size = 0;
  for (int c = 0; c < r.clusters.cluster_count; ++c) {
    const std::size_t s = r.clusters.size_of(c);
    if (s > major_size) {
      major_size = s;
      major = c;
    }
  }
  r.major = major;
  if (major < 0) {
    // everything is noise: no centre to pull towards
    r.centroid_index = 0;
    r.centroid_point = prompts.points.front();
    return r;
  }
  r.centroid_index = cluster_centroid(r.clusters, r.features, major);
  r.centroid_point = prompts.points[r.centroid_index];
  for (std::size_t i = 0; i < prompts.points.size(); ++i) {
    if (r.clusters.labels[i] == major) continue;
    r.outliers.push_back(static_cast<int>(i));
    r.loss += (prompts.points[i] - r.centroid_point).norm();
  }
  return r;
}

ACResult ac_loss_for_primitive(const PromptSet& prompts, const ImageEmbedding& h, const AttentionProvider& provider,
                               const ACOptions& opts) {
  std::vector<AttentionMap> maps;
  maps.reserve(prompts.points.size());
  for (const Vec2& p : prompts.points) maps.push_back(attention_map(provider, h, p, prompts.box));
  return ac_loss_from_maps(prompts, maps, opts);
}

ad::Var ac_loss_var(ad::Var points, const ACResult& result) {
  const auto& v = points.value();
  double loss = 0.0;
  std::vector<double> dir(2 * result.outliers.size(), 0.0);
  for (std::size_t k = 0; k < result.outliers.size(); ++k) {
    const int i = result.outliers[k];
    const Vec2 d = Vec2(v[2 * i], v[2 * i + 1]) - result.centroid_point;
    const double n = d.norm();
    loss += n;
    if (n > 0.0) {
      dir[2 * k] = d.x() / n;
      dir[2 * k + 1] = d.y() / n;
    }
  }
  std::vector<int> idx = result.outliers;
  return points.tape()->record({loss}, {points},
                               [idx = std::move(idx), dir = std::move(dir)](std::span<const double> g,
                                                                            std::span<const std::span<double>> gi) {
                                 if (gi[0].empty()) return;
                                 for (std::size_t k = 0; k < idx.size(); ++k) {
                                   gi[0][2 * idx[k]] += g[0] * dir[2 * k];
                                   gi[0][2 * idx[k] + 1] += g[0] * dir[2 * k + 1];
                                 }
                               });
}

double ac_loss_total(std::span<const std::vector<ACResult>> per_view) {
  if (per_view.empty()) return 0.0;
  double total = 0.0;
  for (const auto& view : per_view) {
    double s = 0.0;
    for (const auto& r : view) s += r.loss;
    total += s;
  }
  return total / static_cast<double>(per_view.size());
}

}  // namespace sqb

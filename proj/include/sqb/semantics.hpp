#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "sqb/common.hpp"
#include "sqb/image.hpp"

namespace sqb {

/// Identifies one view for a provider.
struct ImageEmbedding {
  int view_id = 0;
  std::uint64_t image_hash = 0;
};

ImageEmbedding embed_view(int view_id, const Image& image);

struct AttentionMap {
  int height = 0;
  int width = 0;
  std::vector<float> grid;  // row-major, sums to 1
  Vec2 point = Vec2::Zero();
  PixelBox box;
};

/// Source of attention maps for (point, box) prompts. Implementations must
/// tolerate concurrent queries.
class AttentionProvider {
 public:
  virtual ~AttentionProvider() = default;
  virtual AttentionMap query(const ImageEmbedding& h, const Vec2& point, const PixelBox& box) const = 0;
};

/// Checks the prompt preconditions, then queries the provider.
AttentionMap attention_map(const AttentionProvider& provider, const ImageEmbedding& h, const Vec2& point,
                           const PixelBox& box);

/// Precomputed maps on disk: <dir>/<view_id>/<px>_<py>_<x0>_<y0>_<x1>_<y1>.amap,
/// coordinates floored to integers. Missing entries raise MissingPrior.
class FileAttentionProvider : public AttentionProvider {
 public:
  explicit FileAttentionProvider(std::filesystem::path dir);
  AttentionMap query(const ImageEmbedding& h, const Vec2& point, const PixelBox& box) const override;

  static std::filesystem::path entry_path(const std::filesystem::path& dir, int view_id, const Vec2& point,
                                          const PixelBox& box);
  static void write(const std::filesystem::path& file, const AttentionMap& map);
  static AttentionMap read(const std::filesystem::path& file);

 private:
  std::filesystem::path dir_;
};

/// Ground-truth stand-in: the blurred, normalized indicator of the part under
/// the prompt point. A point on background snaps to the nearest labelled
/// pixel inside the box; with none, the background region itself is used.
class SyntheticOracle : public AttentionProvider {
 public:
  SyntheticOracle(std::vector<LabelImage> masks, double blur_sigma = 3.0);
  AttentionMap query(const ImageEmbedding& h, const Vec2& point, const PixelBox& box) const override;

  /// Label the query for (view, point, box) resolves to.
  std::int32_t resolve_label(int view_id, const Vec2& point, const PixelBox& box) const;
  std::size_t view_count() const { return masks_.size(); }

 private:
  std::shared_ptr<const std::vector<float>> label_map(int view_id, std::int32_t label) const;

  std::vector<LabelImage> masks_;
  double blur_sigma_;
  mutable std::mutex mutex_;
  mutable std::map<std::pair<int, std::int32_t>, std::shared_ptr<const std::vector<float>>> cache_;
};

/// Bilinear resample to size x size, flattened.
std::vector<double> map_features(const AttentionMap& map, int size = 32);

struct ClusterResult {
  static constexpr int kNoise = -1;
  std::vector<int> labels;
  std::vector<double> probabilities;
  int cluster_count = 0;

  std::size_t size_of(int label) const;
};

/// HDBSCAN on a symmetric distance matrix: core distance is the distance to
/// the k-th nearest point counting the point itself (k = min_cluster_size),
/// mutual reachability, minimum spanning tree, condensed tree and
/// excess-of-mass selection with the root eligible. Stability ties keep the
/// parent.
ClusterResult hdbscan_distances(const Eigen::MatrixXd& dist, int min_cluster_size);
/// Clusters maps by the L2 distance between their 32x32 features.
ClusterResult hdbscan(std::span<const AttentionMap> maps, int min_cluster_size);
Eigen::MatrixXd pairwise_l2(std::span<const std::vector<double>> features);

double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

}  // namespace sqb

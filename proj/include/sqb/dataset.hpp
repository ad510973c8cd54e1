#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "sqb/image.hpp"
#include "sqb/rasterizer.hpp"

namespace sqb {

struct View {
  int id = 0;
  Image image;       // RGB
  Image silhouette;  // 1 channel
  Camera camera;
  std::optional<LabelImage> parts;
};

/// On disk: images/NNN.png, silhouettes/NNN.png, masks/NNN.png (palette
/// indices are part labels), cameras.json, optional gt_points.ply.
struct Dataset {
  std::vector<View> views;
  std::vector<Vec3> gt_points;
  Vec3 up = Vec3::UnitY();

  bool has_parts() const;
  int width() const { return views.empty() ? 0 : views.front().camera.width; }
  int height() const { return views.empty() ? 0 : views.front().camera.height; }
  void validate() const;
  /// All images, silhouettes, masks and cameras resampled by `factor`
  /// (box filter for integer downscales, nearest for labels).
  Dataset downscaled(int factor) const;
};

Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);

/// Binary little-endian PLY with double x, y, z.
void write_points_ply(const std::filesystem::path& path, std::span<const Vec3> points);
std::vector<Vec3> read_points_ply(const std::filesystem::path& path);

}  // namespace sqb

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sqb/dataset.hpp"

namespace sqb {

/// Axis-aligned ellipsoid or y-aligned capped cylinder.
struct Solid {
  enum class Kind { kEllipsoid, kCylinderY } kind = Kind::kEllipsoid;
  Vec3 center = Vec3::Zero();
  Vec3 radii = Vec3::Ones();  // cylinder: radii.x() radius, radii.y() half height
  std::int32_t label = 1;
  Vec3 color = Vec3::Constant(0.8);

  bool contains(const Vec3& p) const;
  /// Smallest t > 0 where origin + t dir enters the solid, with the outward normal.
  std::optional<std::pair<double, Vec3>> intersect(const Vec3& origin, const Vec3& dir) const;
};

struct AnalyticShape {
  std::string name;
  std::vector<Solid> solids;
  double bounding_radius = 1.0;

  int label_count() const;
  bool contains(const Vec3& p) const;
  /// Surface samples of the union (points hidden inside other solids dropped).
  std::vector<Vec3> sample_surface(std::size_t n, std::mt19937_64& rng) const;
};

/// sphere, ellipsoid, dumbbell, two-blob or toy-figure.
AnalyticShape make_shape(const std::string& name);

struct SynthRecipe {
  std::string shape = "sphere";
  int views = 20;
  int width = 64;
  int height = 64;
  // views alternate between the two elevations, all above the ground
  double elevation_deg = 30.0;
  double elevation_low_deg = 10.0;
  double distance_factor = 2.5;  // camera distance / bounding radius, inside the background dome
  bool shading = false;
  int gt_points = 20000;
  Vec3 background = Vec3::Zero();
  std::uint64_t seed = 0;
};

/// Ring of cameras around the up (+y) axis looking at the origin.
std::vector<Camera> camera_ring(const SynthRecipe& recipe, double bounding_radius);

struct RayCast {
  Image image;
  Image silhouette;
  LabelImage labels;
};
RayCast ray_cast(const AnalyticShape& shape, const Camera& cam, bool shading, const Vec3& background);

Dataset synthesize(const SynthRecipe& recipe);

}  // namespace sqb

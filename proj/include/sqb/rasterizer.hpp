#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sqb/common.hpp"
#include "sqb/geometry.hpp"
#include "sqb/image.hpp"

namespace sqb {

/// Pinhole camera, OpenCV axes (x right, y down, z forward). Pixel (i, j)
/// covers [i, i+1) x [j, j+1); its centre is (i + 0.5, j + 0.5).
struct Camera {
  Mat4 view = Mat4::Identity();
  Mat4 proj = Mat4::Identity();
  int width = 0;
  int height = 0;
  double fx = 1, fy = 1, cx = 0, cy = 0;
  double near = 1e-2, far = 1e3;

  static Camera from_intrinsics(const Mat4& view, double fx, double fy, double cx, double cy, int width, int height,
                                double near = 1e-2, double far = 1e3);
  /// Symmetric frustum looking from eye to target; up is the world up vector.
  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y_deg, int width,
                        int height);

  Vec3 center() const;
  Vec3 to_camera(const Vec3& p) const { return (view * p.homogeneous()).head<3>(); }
  Vec2 ndc_to_screen(const Vec2& ndc) const {
    return {(ndc.x() + 1.0) * 0.5 * width, (ndc.y() + 1.0) * 0.5 * height};
  }
  /// Same pose, resolution multiplied by factor (intrinsics scaled to match).
  Camera scaled(double factor) const;
  void validate() const;
};

/// Softness, layer count and background of the soft rasterizer.
struct SoftRenderConfig {
  double sigma = 0.0;  // squared pixels; <= 0 selects 1e-4 * diagonal^2
  int faces_per_pixel = 10;
  Vec3 background = Vec3::Zero();
  /// Outside contributions with delta/sigma below this are dropped.
  double cutoff = -20.0;

  double resolved_sigma(int width, int height) const;
  void validate() const;
};

struct ProjectedMesh {
  std::vector<Vec2> pixels;
  std::vector<double> depth;  // camera-space z
  std::vector<std::uint8_t> clipped;
};

/// Screen projection through view, proj, perspective divide and the NDC map.
/// Throws AllClipped when every vertex sits behind the near plane, unless
/// allow_all_clipped is set.
ProjectedMesh project_vertices(const PrimitiveMesh& mesh, const Camera& cam, bool allow_all_clipped = false);
Vec2 project_point(const Vec3& p, const Camera& cam);
/// d(pixel)/d(world point), 2x3.
Eigen::Matrix<double, 2, 3> project_jacobian(const Vec3& p, const Camera& cam);
/// Maps 2 gradients per vertex to 3 per vertex. Clipped vertices get 0.
std::vector<double> project_vertices_vjp(const PrimitiveMesh& mesh, const Camera& cam,
                                         std::span<const double> pixel_grad);

/// Signed squared distance from p to the triangle boundary: + inside, - outside.
double signed_sq_distance(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& p);
double face_occupancy(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& pixel, double alpha,
                      double sigma);

struct CompositeResult {
  Vec3 color = Vec3::Zero();
  double coverage = 0.0;
};
/// Front-to-back "over" blending of occupancies with per-layer colours.
CompositeResult composite(std::span<const double> occupancy, std::span<const Vec3> colors, const Vec3& background);
/// Blending weights of every layer followed by the background weight.
std::vector<double> composite_weights(std::span<const double> occupancy);

struct RenderPrimitive {
  const PrimitiveMesh* mesh = nullptr;
  ProjectedMesh projected;
  double alpha = 1.0;
  Vec3 color = Vec3::Constant(0.5);
};

std::vector<RenderPrimitive> prepare_render(std::span<const PrimitiveMesh> meshes, std::span<const double> alphas,
                                            std::span<const Vec3> colors, const Camera& cam,
                                            bool allow_all_clipped = false);

struct FaceEntry {
  std::int32_t face = 0;
  std::int32_t owner = 0;  // index into the render list
  PrimitiveId owner_id = 0;
  double occupancy = 0.0;
  double depth = 0.0;
};

struct RenderOutput {
  int width = 0;
  int height = 0;
  double sigma = 0.0;
  Vec3 background = Vec3::Zero();
  Image image;
  Image silhouette;
  std::vector<std::uint32_t> offsets;  // width*height + 1
  std::vector<FaceEntry> entries;      // front-to-back per pixel
  std::vector<std::int32_t> dominant;  // per pixel: owner with largest blending weight, -1 if none
  std::vector<PixelBox> solo_boxes;    // per owner: extent of its solo coverage >= 0.5

  std::span<const FaceEntry> entries_at(int x, int y) const {
    const std::size_t p = static_cast<std::size_t>(y) * width + x;
    return {entries.data() + offsets[p], entries.data() + offsets[p + 1]};
  }
};

RenderOutput render(std::span<const RenderPrimitive> prims, const Camera& cam, const SoftRenderConfig& cfg);
RenderOutput render(std::span<const PrimitiveMesh> meshes, std::span<const double> alphas,
                    std::span<const Vec3> colors, const Camera& cam, const SoftRenderConfig& cfg);

struct RenderGrad {
  std::vector<std::vector<double>> pixels;  // per owner, 2 per vertex
  std::vector<double> alpha;
  std::vector<Vec3> color;
};

/// Reverse pass given dL/d(silhouette) (one per pixel) and optionally
/// dL/d(image) (three per pixel, may be empty). Depth order is held fixed.
RenderGrad render_backward(std::span<const RenderPrimitive> prims, const RenderOutput& out,
                           std::span<const double> d_silhouette, std::span<const double> d_image);

struct PromptSet {
  PrimitiveId owner_id = 0;
  std::int32_t owner = 0;
  std::vector<Vec2> points;
  std::vector<std::int32_t> vertices;
  PixelBox box;

  std::size_t size() const { return points.size(); }
};

struct PromptOptions {
  int max_prompts = 64;  // <= 0 keeps every visible vertex
};

/// Vertices with a front-facing incident face whose pixel is dominated by the
/// owning primitive. Throws EmptyPrompt when none qualify.
PromptSet prompts_for_primitive(const RenderOutput& out, std::span<const RenderPrimitive> prims, std::size_t owner,
                                const Camera& cam, const PromptOptions& opts = {});
/// Prompt sets of every primitive that has at least one visible vertex; the
/// ids of fully hidden ones go to `occluded` when given.
std::vector<PromptSet> visible_point_prompts(const RenderOutput& out, std::span<const RenderPrimitive> prims,
                                             const Camera& cam, const PromptOptions& opts = {},
                                             std::vector<PrimitiveId>* occluded = nullptr);

/// Debug dump: "FBUF1", u32 width, u32 height, u32 count per pixel, then per
/// entry i32 face, i64 owner id, f64 occupancy, f64 depth. Little-endian.
void write_face_buffer(const std::filesystem::path& path, const RenderOutput& out);
RenderOutput read_face_buffer(const std::filesystem::path& path);

}  // namespace sqb

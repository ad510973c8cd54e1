#pragma once

// Tape nodes chaining superquadric parameters through deformation,
// projection and soft rendering.

#include <memory>
#include <span>
#include <vector>

#include "sqb/autodiff.hpp"
#include "sqb/rasterizer.hpp"

namespace sqb {

/// 15 parameters -> 3 world coordinates per template vertex. The parameter
/// values must describe `sq` (already projected onto the valid set).
ad::Var deform_op(ad::Var params, const Superquadric& sq, const IcosphereTemplate& tpl);

/// 3 world coordinates per vertex -> 2 pixel coordinates per vertex.
ad::Var project_op(ad::Var vertices, std::shared_ptr<const PrimitiveMesh> mesh, const Camera& cam);

/// Forward state shared between the render node and later consumers
/// (prompt extraction needs the face buffer).
struct RenderState {
  std::vector<std::shared_ptr<const PrimitiveMesh>> meshes;
  std::vector<RenderPrimitive> prims;
  RenderOutput out;
};

struct RenderNode {
  ad::Var silhouette;  // one value per pixel
  std::shared_ptr<RenderState> state;
};

/// Soft silhouette of several primitives. `pixels[i]` is primitive i's
/// projected vertices, `params[i]` its 15-vector (slot 0 carries alpha).
RenderNode render_op(std::span<const ad::Var> pixels, std::span<const ad::Var> params,
                     std::vector<std::shared_ptr<const PrimitiveMesh>> meshes, std::span<const Vec3> colors,
                     const Camera& cam, const SoftRenderConfig& cfg);

/// Gathers 2D prompt coordinates (by vertex index) from a projected-vertex node.
ad::Var gather_points(ad::Var pixels, std::span<const std::int32_t> vertices);

}  // namespace sqb

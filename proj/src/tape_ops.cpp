#include "sqb/tape_ops.hpp"

namespace sqb {

ad::Var deform_op(ad::Var params, const Superquadric& sq, const IcosphereTemplate& tpl) {
  const PrimitiveMesh mesh = deform(sq, tpl);
  std::vector<double> flat(3 * mesh.world_vertices.size());
  for (std::size_t i = 0; i < mesh.world_vertices.size(); ++i)
    for (int k = 0; k < 3; ++k) flat[3 * i + k] = mesh.world_vertices[i][k];
  return params.tape()->record(std::move(flat), {params},
                               [sq, &tpl](std::span<const double> g, std::span<const std::span<double>> gi) {
                                 if (gi[0].empty()) return;
                                 const auto dp = deform_vjp(sq, tpl, g);
                                 for (std::size_t k = 1; k < dp.size(); ++k) gi[0][k] += dp[k];
                               });
}

ad::Var project_op(ad::Var vertices, std::shared_ptr<const PrimitiveMesh> mesh, const Camera& cam) {
  const ProjectedMesh pm = project_vertices(*mesh, cam, true);
  std::vector<double> flat(2 * pm.pixels.size());
  for (std::size_t i = 0; i < pm.pixels.size(); ++i) {
    flat[2 * i] = pm.pixels[i].x();
    flat[2 * i + 1] = pm.pixels[i].y();
  }
  return vertices.tape()->record(std::move(flat), {vertices},
                                 [mesh, cam](std::span<const double> g, std::span<const std::span<double>> gi) {
                                   if (gi[0].empty()) return;
                                   const auto dv = project_vertices_vjp(*mesh, cam, g);
                                   for (std::size_t k = 0; k < dv.size(); ++k) gi[0][k] += dv[k];
                                 });
}

RenderNode render_op(std::span<const ad::Var> pixels, std::span<const ad::Var> params,
                     std::vector<std::shared_ptr<const PrimitiveMesh>> meshes, std::span<const Vec3> colors,
                     const Camera& cam, const SoftRenderConfig& cfg) {
  if (pixels.size() != meshes.size() || params.size() != meshes.size() || colors.size() != meshes.size())
    throw std::invalid_argument("render_op: per-primitive input count mismatch");
  auto state = std::make_shared<RenderState>();
  state->meshes = std::move(meshes);
  state->prims.resize(state->meshes.size());
  for (std::size_t i = 0; i < state->meshes.size(); ++i) {
    RenderPrimitive& rp = state->prims[i];
    rp.mesh = state->meshes[i].get();
    rp.projected = project_vertices(*rp.mesh, cam, true);
    rp.alpha = params[i].value()[Superquadric::kAlpha];
    rp.color = colors[i];
  }
  state->out = render(state->prims, cam, cfg);
  std::vector<ad::Var> inputs(pixels.begin(), pixels.end());
  inputs.insert(inputs.end(), params.begin(), params.end());
  const std::size_t n = state->meshes.size();
  ad::Tape* tape = pixels.front().tape();
  RenderNode node;
  node.state = state;
  node.silhouette =
      tape->record(state->out.silhouette.data, inputs,
                   [state, n](std::span<const double> g, std::span<const std::span<double>> gi) {
                     const RenderGrad rg = render_backward(state->prims, state->out, g, {});
                     for (std::size_t i = 0; i < n; ++i) {
                       if (!gi[i].empty())
                         for (std::size_t k = 0; k < rg.pixels[i].size(); ++k) gi[i][k] += rg.pixels[i][k];
                       if (!gi[n + i].empty()) gi[n + i][Superquadric::kAlpha] += rg.alpha[i];
                     }
                   });
  return node;
}

ad::Var gather_points(ad::Var pixels, std::span<const std::int32_t> vertices) {
  std::vector<std::size_t> idx;
  idx.reserve(2 * vertices.size());
  for (std::int32_t v : vertices) {
    idx.push_back(2 * static_cast<std::size_t>(v));
    idx.push_back(2 * static_cast<std::size_t>(v) + 1);
  }
  return ad::gather(pixels, idx);
}

}  // namespace sqb

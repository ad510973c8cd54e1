#include "sqb/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace sqb {

Camera Camera::from_intrinsics(const Mat4& view, double fx, double fy, double cx, double cy, int width, int height,
                               double near, double far) {
  Camera c;
  c.view = view;
  c.fx = fx;
  c.fy = fy;
  c.cx = cx;
  c.cy = cy;
  c.width = width;
  c.height = height;
  c.near = near;
  c.far = far;
  c.proj = Mat4::Zero();
  c.proj(0, 0) = 2.0 * fx / width;
  c.proj(0, 2) = 2.0 * cx / width - 1.0;
  c.proj(1, 1) = 2.0 * fy / height;
  c.proj(1, 2) = 2.0 * cy / height - 1.0;
  c.proj(2, 2) = (far + near) / (far - near);
  c.proj(2, 3) = -2.0 * far * near / (far - near);
  c.proj(3, 2) = 1.0;
  c.validate();
  return c;
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y_deg, int width,
                       int height) {
  const Vec3 f = (target - eye).normalized();
  Vec3 r = f.cross(up);
  if (r.norm() < 1e-12) r = f.cross(Vec3::UnitX());
  r.normalize();
  const Vec3 d = f.cross(r);
  Mat4 view = Mat4::Identity();
  view.block<1, 3>(0, 0) = r.transpose();
  view.block<1, 3>(1, 0) = d.transpose();
  view.block<1, 3>(2, 0) = f.transpose();
  view.block<3, 1>(0, 3) = -view.block<3, 3>(0, 0) * eye;
  const double fy = 0.5 * height / std::tan(0.5 * fov_y_deg * M_PI / 180.0);
  return from_intrinsics(view, fy, fy, 0.5 * width, 0.5 * height, width, height);
}

Vec3 Camera::center() const {
  const Mat3 r = view.block<3, 3>(0, 0);
  return -r.transpose() * view.block<3, 1>(0, 3);
}

Camera Camera::scaled(double factor) const {
  return from_intrinsics(view, fx * factor, fy * factor, cx * factor, cy * factor,
                         static_cast<int>(std::lround(width * factor)), static_cast<int>(std::lround(height * factor)),
                         near, far);
}

void Camera::validate() const {
  if (width <= 0 || height <= 0) throw std::invalid_argument("camera size must be positive");
  if (!view.allFinite() || !proj.allFinite()) throw std::invalid_argument("camera matrices not finite");
  if (std::abs((proj * view).determinant()) < 1e-300) throw std::invalid_argument("camera proj*view singular");
}

double SoftRenderConfig::resolved_sigma(int width, int height) const {
  if (sigma > 0.0) return sigma;
  return 1e-4 * (static_cast<double>(width) * width + static_cast<double>(height) * height);
}

void SoftRenderConfig::validate() const {
  if (faces_per_pixel < 1) throw std::invalid_argument("faces_per_pixel must be >= 1");
  if (!(cutoff < 0.0)) throw std::invalid_argument("occupancy cutoff must be negative");
}

Vec2 project_point(const Vec3& p, const Camera& cam) {
  const Vec4 clip = cam.proj * (cam.view * p.homogeneous());
  return cam.ndc_to_screen(clip.head<2>() / clip.w());
}

Eigen::Matrix<double, 2, 3> project_jacobian(const Vec3& p, const Camera& cam) {
  const Vec4 x = cam.view * p.homogeneous();
  const Vec4 c = cam.proj * x;
  const double w = c.w();
  Eigen::Matrix<double, 2, 3> d_cam;
  for (int r = 0; r < 2; ++r) {
    const double half = 0.5 * (r == 0 ? cam.width : cam.height);
    for (int k = 0; k < 3; ++k) d_cam(r, k) = half * (cam.proj(r, k) * w - c[r] * cam.proj(3, k)) / (w * w);
  }
  return d_cam * cam.view.block<3, 3>(0, 0);
}

ProjectedMesh project_vertices(const PrimitiveMesh& mesh, const Camera& cam, bool allow_all_clipped) {
  ProjectedMesh out;
  const std::size_t n = mesh.world_vertices.size();
  out.pixels.resize(n);
  out.depth.resize(n);
  out.clipped.assign(n, 0);
  const Mat4 pv = cam.proj * cam.view;
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec4 clip = pv * mesh.world_vertices[i].homogeneous();
    out.depth[i] = clip.w();
    if (!(clip.w() > cam.near)) {
      out.clipped[i] = 1;
      out.pixels[i] = Vec2::Zero();
      ++clipped;
      continue;
    }
    out.pixels[i] = cam.ndc_to_screen(clip.head<2>() / clip.w());
  }
  if (n > 0 && clipped == n && !allow_all_clipped)
    throw AllClipped("primitive " + std::to_string(mesh.owner_id) + " is entirely behind the camera");
  return out;
}

std::vector<double> project_vertices_vjp(const PrimitiveMesh& mesh, const Camera& cam,
                                         std::span<const double> pixel_grad) {
  const std::size_t n = mesh.world_vertices.size();
  if (pixel_grad.size() != 2 * n) throw std::invalid_argument("project_vertices_vjp: gradient size");
  std::vector<double> out(3 * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double gx = pixel_grad[2 * i], gy = pixel_grad[2 * i + 1];
    if (gx == 0.0 && gy == 0.0) continue;
    if (!(cam.to_camera(mesh.world_vertices[i]).z() > cam.near)) continue;
    const Vec3 g = project_jacobian(mesh.world_vertices[i], cam).transpose() * Vec2(gx, gy);
    for (int k = 0; k < 3; ++k) out[3 * i + k] = g[k];
  }
  return out;
}

namespace {

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

struct Boundary {
  double d2 = 0.0;  // squared distance to the closest boundary point
  int edge = 0;     // edge k runs from vertex k to vertex (k+1)%3
  double t = 0.0;   // closest point = v_k + t (v_{k+1} - v_k)
  bool inside = false;
};

Boundary closest_boundary(const Vec2 (&v)[3], const Vec2& p) {
  Boundary b;
  b.d2 = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    const Vec2& a = v[k];
    const Vec2 e = v[(k + 1) % 3] - a;
    const double len2 = e.squaredNorm();
    const double t = len2 > 0.0 ? std::clamp((p - a).dot(e) / len2, 0.0, 1.0) : 0.0;
    const double d2 = (a + t * e - p).squaredNorm();
    if (d2 < b.d2) {
      b.d2 = d2;
      b.edge = k;
      b.t = t;
    }
  }
  const double e0 = cross2(v[1] - v[0], p - v[0]);
  const double e1 = cross2(v[2] - v[1], p - v[1]);
  const double e2 = cross2(v[0] - v[2], p - v[2]);
  const double area = cross2(v[1] - v[0], v[2] - v[0]);
  if (area != 0.0) b.inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
  return b;
}

struct Candidate {
  std::uint32_t pixel;
  FaceEntry entry;
};

bool entry_less(const FaceEntry& a, const FaceEntry& b) {
  if (a.depth != b.depth) return a.depth < b.depth;
  if (a.owner_id != b.owner_id) return a.owner_id < b.owner_id;
  if (a.owner != b.owner) return a.owner < b.owner;
  return a.face < b.face;
}

}  // namespace

double signed_sq_distance(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& p) {
  const Vec2 v[3] = {a, b, c};
  const Boundary bd = closest_boundary(v, p);
  return bd.inside ? bd.d2 : -bd.d2;
}

double face_occupancy(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& pixel, double alpha, double sigma) {
  const double delta = signed_sq_distance(a, b, c, pixel);
  return alpha * std::exp(std::min(delta / sigma, 0.0));
}

CompositeResult composite(std::span<const double> occupancy, std::span<const Vec3> colors, const Vec3& background) {
  if (colors.size() != occupancy.size()) throw std::invalid_argument("composite: colour count mismatch");
  CompositeResult r;
  double t = 1.0;
  for (std::size_t l = 0; l < occupancy.size(); ++l) {
    r.color += t * occupancy[l] * colors[l];
    t *= 1.0 - occupancy[l];
  }
  r.color += t * background;
  r.coverage = 1.0 - t;
  return r;
}

std::vector<double> composite_weights(std::span<const double> occupancy) {
  std::vector<double> w(occupancy.size() + 1);
  double t = 1.0;
  for (std::size_t l = 0; l < occupancy.size(); ++l) {
    w[l] = t * occupancy[l];
    t *= 1.0 - occupancy[l];
  }
  w.back() = t;
  return w;
}

std::vector<RenderPrimitive> prepare_render(std::span<const PrimitiveMesh> meshes, std::span<const double> alphas,
                                            std::span<const Vec3> colors, const Camera& cam,
                                            bool allow_all_clipped) {
  if (alphas.size() != meshes.size() || colors.size() != meshes.size())
    throw std::invalid_argument("prepare_render: per-mesh attribute count mismatch");
  std::vector<RenderPrimitive> prims(meshes.size());
  for (std::size_t i = 0; i < meshes.size(); ++i) {
    prims[i].mesh = &meshes[i];
    prims[i].projected = project_vertices(meshes[i], cam, allow_all_clipped);
    prims[i].alpha = alphas[i];
    prims[i].color = colors[i];
  }
  return prims;
}

RenderOutput render(std::span<const RenderPrimitive> prims, const Camera& cam, const SoftRenderConfig& cfg) {
  cfg.validate();
  if (prims.empty()) throw std::invalid_argument("render: no primitives");
  const int w = cam.width, h = cam.height;
  const std::size_t npix = static_cast<std::size_t>(w) * h;
  const double sigma = cfg.resolved_sigma(w, h);
  const double max_d2 = -cfg.cutoff * sigma;
  const double reach = std::sqrt(max_d2);

  std::vector<Candidate> cands;
  for (std::size_t o = 0; o < prims.size(); ++o) {
    const RenderPrimitive& rp = prims[o];
    if (rp.alpha <= 0.0) continue;
    const auto& faces = rp.mesh->face_list();
    const ProjectedMesh& pm = rp.projected;
    for (std::size_t f = 0; f < faces.size(); ++f) {
      const Face& fc = faces[f];
      if (pm.clipped[fc[0]] || pm.clipped[fc[1]] || pm.clipped[fc[2]]) continue;
      const Vec2 v[3] = {pm.pixels[fc[0]], pm.pixels[fc[1]], pm.pixels[fc[2]]};
      const double depth = (pm.depth[fc[0]] + pm.depth[fc[1]] + pm.depth[fc[2]]) / 3.0;
      const double lo_x = std::min({v[0].x(), v[1].x(), v[2].x()}) - reach;
      const double hi_x = std::max({v[0].x(), v[1].x(), v[2].x()}) + reach;
      const double lo_y = std::min({v[0].y(), v[1].y(), v[2].y()}) - reach;
      const double hi_y = std::max({v[0].y(), v[1].y(), v[2].y()}) + reach;
      const int x0 = std::max(0, static_cast<int>(std::floor(lo_x - 0.5)));
      const int x1 = std::min(w - 1, static_cast<int>(std::ceil(hi_x - 0.5)));
      const int y0 = std::max(0, static_cast<int>(std::floor(lo_y - 0.5)));
      const int y1 = std::min(h - 1, static_cast<int>(std::ceil(hi_y - 0.5)));
      // distance to a separating edge line bounds the distance to the face
      const double orient = cross2(v[1] - v[0], v[2] - v[0]);
      double inv_len2[3];
      for (int k = 0; k < 3; ++k) {
        const double l2 = (v[(k + 1) % 3] - v[k]).squaredNorm();
        inv_len2[k] = l2 > 0.0 ? 1.0 / l2 : 0.0;
      }
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const Vec2 p(x + 0.5, y + 0.5);
          if (orient != 0.0) {
            bool far = false;
            for (int k = 0; k < 3 && !far; ++k) {
              const double c = cross2(v[(k + 1) % 3] - v[k], p - v[k]);
              far = c * orient < 0.0 && c * c * inv_len2[k] > max_d2;
            }
            if (far) continue;
          }
          const Boundary bd = closest_boundary(v, p);
          double occ;
          if (bd.inside) {
            occ = rp.alpha;
          } else {
            if (bd.d2 > max_d2) continue;
            occ = rp.alpha * std::exp(-bd.d2 / sigma);
          }
          if (occ <= 0.0) continue;
          cands.push_back({static_cast<std::uint32_t>(y * w + x),
                           {static_cast<std::int32_t>(f), static_cast<std::int32_t>(o), rp.mesh->owner_id, occ,
                            depth}});
        }
      }
    }
  }

  // bucket by pixel, keeping generation order inside a bucket
  std::vector<std::uint32_t> start(npix + 1, 0);
  for (const Candidate& c : cands) ++start[c.pixel + 1];
  std::partial_sum(start.begin(), start.end(), start.begin());
  std::vector<FaceEntry> sorted(cands.size());
  {
    std::vector<std::uint32_t> fill(start.begin(), start.end() - 1);
    for (const Candidate& c : cands) sorted[fill[c.pixel]++] = c.entry;
  }
  cands.clear();
  cands.shrink_to_fit();

  const std::size_t layers = static_cast<std::size_t>(cfg.faces_per_pixel);
  RenderOutput out;
  out.width = w;
  out.height = h;
  out.sigma = sigma;
  out.background = cfg.background;
  out.image = Image(w, h, 3);
  out.silhouette = Image(w, h, 1);
  out.dominant.assign(npix, -1);
  out.offsets.assign(npix + 1, 0);
  for (std::size_t p = 0; p < npix; ++p)
    out.offsets[p + 1] = out.offsets[p] + static_cast<std::uint32_t>(std::min<std::size_t>(start[p + 1] - start[p], layers));
  out.entries.resize(out.offsets.back());

#pragma omp parallel for schedule(static)
  for (std::int64_t ps = 0; ps < static_cast<std::int64_t>(npix); ++ps) {
    const auto p = static_cast<std::size_t>(ps);
    auto first = sorted.begin() + start[p];
    auto last = sorted.begin() + start[p + 1];
    std::sort(first, last, entry_less);
    std::copy(first, first + (out.offsets[p + 1] - out.offsets[p]), out.entries.begin() + out.offsets[p]);
    double t = 1.0, best = -1.0;
    Vec3 color = Vec3::Zero();
    for (std::uint32_t e = out.offsets[p]; e < out.offsets[p + 1]; ++e) {
      const FaceEntry& fe = out.entries[e];
      const double wgt = t * fe.occupancy;
      if (wgt > best) {
        best = wgt;
        out.dominant[p] = fe.owner;
      }
      color += wgt * prims[fe.owner].color;
      t *= 1.0 - fe.occupancy;
    }
    color += t * cfg.background;
    for (int c = 0; c < 3; ++c) out.image.data[3 * p + c] = color[c];
    out.silhouette.data[p] = 1.0 - t;
  }

  // solo coverage per owner from the untruncated candidates, first L of its own faces
  out.solo_boxes.assign(prims.size(), PixelBox{});
  std::vector<bool> seen(prims.size(), false);
  std::vector<std::size_t> count(prims.size());
  std::vector<double> trans(prims.size());
  for (std::size_t p = 0; p < npix; ++p) {
    if (start[p] == start[p + 1]) continue;
    std::fill(count.begin(), count.end(), 0);
    std::fill(trans.begin(), trans.end(), 1.0);
    for (std::uint32_t e = start[p]; e < start[p + 1]; ++e) {
      const FaceEntry& fe = sorted[e];
      if (count[fe.owner] >= layers) continue;
      ++count[fe.owner];
      trans[fe.owner] *= 1.0 - fe.occupancy;
    }
    const int x = static_cast<int>(p % w), y = static_cast<int>(p / w);
    for (std::size_t o = 0; o < prims.size(); ++o) {
      if (count[o] == 0 || 1.0 - trans[o] < 0.5) continue;
      const PixelBox px{double(x), double(y), double(x + 1), double(y + 1)};
      out.solo_boxes[o] = seen[o] ? PixelBox::merged(out.solo_boxes[o], px) : px;
      seen[o] = true;
    }
  }
  return out;
}

RenderOutput render(std::span<const PrimitiveMesh> meshes, std::span<const double> alphas,
                    std::span<const Vec3> colors, const Camera& cam, const SoftRenderConfig& cfg) {
  const auto prims = prepare_render(meshes, alphas, colors, cam);
  return render(prims, cam, cfg);
}

RenderGrad render_backward(std::span<const RenderPrimitive> prims, const RenderOutput& out,
                           std::span<const double> d_silhouette, std::span<const double> d_image) {
  const std::size_t npix = static_cast<std::size_t>(out.width) * out.height;
  if (d_silhouette.size() != npix) throw std::invalid_argument("render_backward: silhouette gradient size");
  if (!d_image.empty() && d_image.size() != 3 * npix)
    throw std::invalid_argument("render_backward: image gradient size");
  const bool with_image = !d_image.empty();

  // per-entry adjoint of occupancy and colour weight
  std::vector<double> g_occ(out.entries.size(), 0.0);
  std::vector<double> w_col(out.entries.size(), 0.0);
#pragma omp parallel for schedule(static)
  for (std::int64_t ps = 0; ps < static_cast<std::int64_t>(npix); ++ps) {
    const auto p = static_cast<std::size_t>(ps);
    const std::uint32_t b = out.offsets[p], e = out.offsets[p + 1];
    if (b == e) continue;
    const double gs = d_silhouette[p];
    const Vec3 gi = with_image ? Vec3(d_image[3 * p], d_image[3 * p + 1], d_image[3 * p + 2]) : Vec3::Zero();
    // suffix accumulators: colour and coverage of the layers behind l
    Vec3 back_color = out.background;
    double back_cov = 0.0;
    std::vector<double> tl(e - b);
    double t = 1.0;
    for (std::uint32_t k = b; k < e; ++k) {
      tl[k - b] = t;
      t *= 1.0 - out.entries[k].occupancy;
    }
    for (std::uint32_t k = e; k-- > b;) {
      const FaceEntry& fe = out.entries[k];
      const Vec3& c = prims[fe.owner].color;
      const double tk = tl[k - b];
      double g = gs * tk * (1.0 - back_cov);
      if (with_image) {
        g += gi.dot(tk * (c - back_color));
        w_col[k] = tk * fe.occupancy;
      }
      g_occ[k] = g;
      back_color = fe.occupancy * c + (1.0 - fe.occupancy) * back_color;
      back_cov = fe.occupancy + (1.0 - fe.occupancy) * back_cov;
    }
  }

  RenderGrad grad;
  grad.pixels.resize(prims.size());
  for (std::size_t o = 0; o < prims.size(); ++o) grad.pixels[o].assign(2 * prims[o].projected.pixels.size(), 0.0);
  grad.alpha.assign(prims.size(), 0.0);
  grad.color.assign(prims.size(), Vec3::Zero());

  // fixed-order reduction over entries
  for (std::size_t p = 0; p < npix; ++p) {
    const Vec2 px((p % out.width) + 0.5, (p / out.width) + 0.5);
    const Vec3 gi = with_image ? Vec3(d_image[3 * p], d_image[3 * p + 1], d_image[3 * p + 2]) : Vec3::Zero();
    for (std::uint32_t k = out.offsets[p]; k < out.offsets[p + 1]; ++k) {
      const FaceEntry& fe = out.entries[k];
      const RenderPrimitive& rp = prims[fe.owner];
      if (with_image) grad.color[fe.owner] += w_col[k] * gi;
      const double g = g_occ[k];
      if (g == 0.0) continue;
      grad.alpha[fe.owner] += g * fe.occupancy / rp.alpha;
      const Face& fc = rp.mesh->face_list()[fe.face];
      const Vec2 v[3] = {rp.projected.pixels[fc[0]], rp.projected.pixels[fc[1]], rp.projected.pixels[fc[2]]};
      const Boundary bd = closest_boundary(v, px);
      if (bd.inside) continue;
      const int ia = bd.edge, ib = (bd.edge + 1) % 3;
      const Vec2 q = v[ia] + bd.t * (v[ib] - v[ia]);
      // O = a exp(-d2/sigma), d2 = |q - p|^2
      const double dd2 = -g * fe.occupancy / out.sigma;
      const Vec2 gq = dd2 * 2.0 * (q - px);
      auto& gp = grad.pixels[fe.owner];
      gp[2 * fc[ia]] += gq.x() * (1.0 - bd.t);
      gp[2 * fc[ia] + 1] += gq.y() * (1.0 - bd.t);
      gp[2 * fc[ib]] += gq.x() * bd.t;
      gp[2 * fc[ib] + 1] += gq.y() * bd.t;
    }
  }
  return grad;
}

PromptSet prompts_for_primitive(const RenderOutput& out, std::span<const RenderPrimitive> prims, std::size_t owner,
                                const Camera& cam, const PromptOptions& opts) {
  const RenderPrimitive& rp = prims[owner];
  const PrimitiveMesh& mesh = *rp.mesh;
  const auto& faces = mesh.face_list();
  const Vec3 eye = cam.center();
  std::vector<std::uint8_t> front(mesh.world_vertices.size(), 0);
  for (const Face& f : faces) {
    const Vec3& a = mesh.world_vertices[f[0]];
    const Vec3& b = mesh.world_vertices[f[1]];
    const Vec3& c = mesh.world_vertices[f[2]];
    const Vec3 n = (b - a).cross(c - a);
    if (n.dot(eye - (a + b + c) / 3.0) > 0.0) front[f[0]] = front[f[1]] = front[f[2]] = 1;
  }
  std::vector<std::int32_t> visible;
  for (std::size_t i = 0; i < mesh.world_vertices.size(); ++i) {
    if (!front[i] || rp.projected.clipped[i]) continue;
    const Vec2& px = rp.projected.pixels[i];
    const int x = static_cast<int>(std::floor(px.x())), y = static_cast<int>(std::floor(px.y()));
    if (x < 0 || y < 0 || x >= out.width || y >= out.height) continue;
    if (out.dominant[static_cast<std::size_t>(y) * out.width + x] != static_cast<std::int32_t>(owner)) continue;
    visible.push_back(static_cast<std::int32_t>(i));
  }
  if (visible.empty()) throw EmptyPrompt(mesh.owner_id);

  PromptSet ps;
  ps.owner_id = mesh.owner_id;
  ps.owner = static_cast<std::int32_t>(owner);
  const std::size_t n = visible.size();
  const std::size_t keep = opts.max_prompts > 0 ? std::min<std::size_t>(n, opts.max_prompts) : n;
  for (std::size_t k = 0; k < keep; ++k) {
    const std::int32_t v = visible[(k * n) / keep];
    ps.vertices.push_back(v);
    ps.points.push_back(rp.projected.pixels[v]);
  }
  PixelBox box = out.solo_boxes[owner];
  bool have = !box.empty();
  for (const Vec2& p : ps.points) {
    const PixelBox pb{std::floor(p.x()), std::floor(p.y()), std::floor(p.x()) + 1, std::floor(p.y()) + 1};
    box = have ? PixelBox::merged(box, pb) : pb;
    have = true;
  }
  box.x0 = std::max(box.x0, 0.0);
  box.y0 = std::max(box.y0, 0.0);
  box.x1 = std::min(box.x1, static_cast<double>(out.width));
  box.y1 = std::min(box.y1, static_cast<double>(out.height));
  ps.box = box;
  return ps;
}

std::vector<PromptSet> visible_point_prompts(const RenderOutput& out, std::span<const RenderPrimitive> prims,
                                             const Camera& cam, const PromptOptions& opts,
                                             std::vector<PrimitiveId>* occluded) {
  std::vector<PromptSet> sets;
  for (std::size_t o = 0; o < prims.size(); ++o) {
    try {
      sets.push_back(prompts_for_primitive(out, prims, o, cam, opts));
    } catch (const EmptyPrompt& e) {
      if (occluded) occluded->push_back(e.id());
    }
  }
  return sets;
}

namespace {

template <class T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error("truncated face buffer file");
  return v;
}

}  // namespace

void write_face_buffer(const std::filesystem::path& path, const RenderOutput& out) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os.write("FBUF1", 5);
  put<std::uint32_t>(os, out.width);
  put<std::uint32_t>(os, out.height);
  for (std::size_t p = 0; p + 1 < out.offsets.size(); ++p) put<std::uint32_t>(os, out.offsets[p + 1] - out.offsets[p]);
  for (const FaceEntry& e : out.entries) {
    put<std::int32_t>(os, e.face);
    put<std::int64_t>(os, e.owner_id);
    put<double>(os, e.occupancy);
    put<double>(os, e.depth);
  }
}

RenderOutput read_face_buffer(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  char magic[5];
  is.read(magic, 5);
  if (!is || std::string(magic, 5) != "FBUF1") throw Error("not a FBUF1 file: " + path.string());
  RenderOutput out;
  out.width = static_cast<int>(get<std::uint32_t>(is));
  out.height = static_cast<int>(get<std::uint32_t>(is));
  const std::size_t npix = static_cast<std::size_t>(out.width) * out.height;
  out.offsets.assign(npix + 1, 0);
  for (std::size_t p = 0; p < npix; ++p) out.offsets[p + 1] = out.offsets[p] + get<std::uint32_t>(is);
  out.entries.resize(out.offsets.back());
  for (FaceEntry& e : out.entries) {
    e.face = get<std::int32_t>(is);
    e.owner_id = get<std::int64_t>(is);
    e.owner = -1;
    e.occupancy = get<double>(is);
    e.depth = get<double>(is);
  }
  return out;
}

}  // namespace sqb

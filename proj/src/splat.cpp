#include "sqb/splat.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sqb {

std::vector<Splat> world_splats(const GaussianScene& gs) {
  std::vector<Splat> out;
  out.reserve(gs.gaussians().size());
  for (const auto& g : gs.gaussians()) {
    const GlobalPose p = gs.world_pose(g);
    out.push_back({p.mu, p.quat, g.scale, g.opacity, g.sh});
  }
  return out;
}

void SplatRenderConfig::validate() const {
  if (tile_size < 1) throw ConfigError("splat tile_size must be >= 1");
  if (!(alpha_threshold > 0.0) || !(alpha_threshold < 1.0)) throw ConfigError("splat alpha_threshold must lie in (0, 1)");
  if (!(min_transmittance >= 0.0)) throw ConfigError("splat min_transmittance must be >= 0");
  if (!(dilation >= 0.0)) throw ConfigError("splat dilation must be >= 0");
}

namespace {

struct Prepared {
  std::vector<Footprint<double>> fp;
  std::vector<std::array<double, 3>> color;  // clamped at 0
  std::vector<std::array<int, 4>> box;       // x0, x1, y0, y1 inclusive
  std::vector<std::vector<int>> tiles;       // splat indices front to back
  int tiles_x = 0, tiles_y = 0;
};

Prepared prepare(std::span<const Splat> splats, int sh_degree, const Camera& cam, const SplatRenderConfig& cfg) {
  cfg.validate();
  const int nsh = sh_coefficients(sh_degree);
  Prepared p;
  const std::size_t n = splats.size();
  p.fp.resize(n);
  p.color.resize(n);
  p.box.resize(n);
  std::vector<int> live;
  std::array<double, 16> basis{};
  for (std::size_t i = 0; i < n; ++i) {
    const Splat& s = splats[i];
    if (s.sh.size() != static_cast<std::size_t>(3 * nsh)) throw ShapeMismatch("splat SH size does not match degree");
    if (!(s.opacity > cfg.alpha_threshold)) continue;
    Footprint<double>& f = p.fp[i];
    if (!splat_footprint<double>(s.mean, {s.quat[0], s.quat[1], s.quat[2], s.quat[3]}, s.scale, s.sh, sh_degree, cam,
                                 cfg.dilation, f, basis))
      continue;
    if (cfg.frustum_margin > 0.0 && (std::abs(f.mx - 0.5 * cam.width) > 0.5 * cfg.frustum_margin * cam.width ||
                                     std::abs(f.my - 0.5 * cam.height) > 0.5 * cfg.frustum_margin * cam.height))
      continue;
    const double r2 = 2.0 * std::log(s.opacity / cfg.alpha_threshold);
    const double rx = std::sqrt(r2 * f.cov_xx), ry = std::sqrt(r2 * f.cov_yy);
    const int x0 = std::max(0, static_cast<int>(std::ceil(f.mx - rx - 0.5)));
    const int x1 = std::min(cam.width - 1, static_cast<int>(std::floor(f.mx + rx - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(f.my - ry - 0.5)));
    const int y1 = std::min(cam.height - 1, static_cast<int>(std::floor(f.my + ry - 0.5)));
    if (x0 > x1 || y0 > y1) continue;
    p.box[i] = {x0, x1, y0, y1};
    for (int c = 0; c < 3; ++c) p.color[i][c] = std::max(f.color[c], 0.0);
    live.push_back(static_cast<int>(i));
  }
  std::stable_sort(live.begin(), live.end(), [&](int a, int b) { return p.fp[a].depth < p.fp[b].depth; });
  const int ts = cfg.tile_size;
  p.tiles_x = (cam.width + ts - 1) / ts;
  p.tiles_y = (cam.height + ts - 1) / ts;
  p.tiles.assign(static_cast<std::size_t>(p.tiles_x) * p.tiles_y, {});
  for (int i : live) {
    const auto& b = p.box[i];
    for (int ty = b[2] / ts; ty <= b[3] / ts; ++ty)
      for (int tx = b[0] / ts; tx <= b[1] / ts; ++tx) p.tiles[static_cast<std::size_t>(ty) * p.tiles_x + tx].push_back(i);
  }
  return p;
}

struct Hit {
  int index;  // position in the tile list
  double alpha, trans, power, dx, dy;
};

/// Front-to-back walk over one pixel; returns the final transmittance.
template <typename F>
double composite(const Prepared& p, const std::vector<int>& list, std::span<const Splat> splats, int x, int y,
                 const SplatRenderConfig& cfg, F&& on_hit) {
  double t = 1.0;
  const double px = x + 0.5, py = y + 0.5;
  for (std::size_t k = 0; k < list.size(); ++k) {
    const int i = list[k];
    const auto& b = p.box[i];
    if (x < b[0] || x > b[1] || y < b[2] || y > b[3]) continue;
    const auto& f = p.fp[i];
    const double dx = px - f.mx, dy = py - f.my;
    const double power = -0.5 * (f.ca * dx * dx + f.cc * dy * dy) - f.cb * dx * dy;
    const double alpha = splats[i].opacity * std::exp(power);
    if (alpha < cfg.alpha_threshold) continue;
    on_hit(Hit{static_cast<int>(k), alpha, t, power, dx, dy});
    t *= 1.0 - alpha;
    if (t < cfg.min_transmittance) break;
  }
  return t;
}

}  // namespace

Image splat_render(std::span<const Splat> splats, int sh_degree, const Camera& cam, const SplatRenderConfig& cfg,
                   const SplatExtras& extras) {
  const Prepared p = prepare(splats, sh_degree, cam, cfg);
  Image img(cam.width, cam.height, 3);
  if (extras.alpha) *extras.alpha = Image(cam.width, cam.height, 1);
  if (extras.group_weight) {
    if (!extras.group || extras.group->size() != splats.size()) throw ShapeMismatch("splat group flags size");
    *extras.group_weight = Image(cam.width, cam.height, 1);
  }
  const int ts = cfg.tile_size;
#pragma omp parallel for schedule(dynamic)
  for (int tile = 0; tile < p.tiles_x * p.tiles_y; ++tile) {
    const auto& list = p.tiles[tile];
    const int tx = tile % p.tiles_x, ty = tile / p.tiles_x;
    for (int y = ty * ts; y < std::min(cam.height, (ty + 1) * ts); ++y)
      for (int x = tx * ts; x < std::min(cam.width, (tx + 1) * ts); ++x) {
        double c[3] = {0, 0, 0};
        double gw = 0.0;
        const double t = composite(p, list, splats, x, y, cfg, [&](const Hit& h) {
          const int i = list[h.index];
          const double w = h.alpha * h.trans;
          for (int ch = 0; ch < 3; ++ch) c[ch] += w * p.color[i][ch];
          if (extras.group_weight && (*extras.group)[i]) gw += w;
        });
        for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = c[ch] + t * cfg.background[ch];
        if (extras.alpha) extras.alpha->at(x, y) = 1.0 - t;
        if (extras.group_weight) extras.group_weight->at(x, y) = gw;
      }
  }
  return img;
}

Image splat_backward(std::span<const Splat> splats, int sh_degree, const Camera& cam, const SplatRenderConfig& cfg,
                     const Image& d_image, SplatGrads& grads) {
  const Prepared p = prepare(splats, sh_degree, cam, cfg);
  if (d_image.width != cam.width || d_image.height != cam.height || d_image.channels != 3)
    throw ShapeMismatch("splat_backward: gradient image shape");
  const std::size_t n = splats.size();
  const int nsh = sh_coefficients(sh_degree);
  Image img(cam.width, cam.height, 3);

  // per tile and list entry: d mx, my, ca, cb, cc, color rgb, opacity
  constexpr int kSlots = 9;
  std::vector<std::vector<double>> tile_grad(p.tiles.size());
  const int ts = cfg.tile_size;
#pragma omp parallel for schedule(dynamic)
  for (int tile = 0; tile < p.tiles_x * p.tiles_y; ++tile) {
    const auto& list = p.tiles[tile];
    auto& acc = tile_grad[tile];
    acc.assign(list.size() * kSlots, 0.0);
    const int tx = tile % p.tiles_x, ty = tile / p.tiles_x;
    std::vector<Hit> hits;
    for (int y = ty * ts; y < std::min(cam.height, (ty + 1) * ts); ++y)
      for (int x = tx * ts; x < std::min(cam.width, (tx + 1) * ts); ++x) {
        hits.clear();
        double c[3] = {0, 0, 0};
        const double t = composite(p, list, splats, x, y, cfg, [&](const Hit& h) {
          hits.push_back(h);
          for (int ch = 0; ch < 3; ++ch) c[ch] += h.alpha * h.trans * p.color[list[h.index]][ch];
        });
        double behind[3];
        for (int ch = 0; ch < 3; ++ch) {
          img.at(x, y, ch) = c[ch] + t * cfg.background[ch];
          behind[ch] = cfg.background[ch];
        }
        const double g[3] = {d_image.at(x, y, 0), d_image.at(x, y, 1), d_image.at(x, y, 2)};
        for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
          const int i = list[it->index];
          double* a = &acc[static_cast<std::size_t>(it->index) * kSlots];
          const double w = it->alpha * it->trans;
          double d_alpha = 0.0;
          for (int ch = 0; ch < 3; ++ch) {
            a[5 + ch] += g[ch] * w;
            d_alpha += g[ch] * it->trans * (p.color[i][ch] - behind[ch]);
            behind[ch] = p.color[i][ch] * it->alpha + (1.0 - it->alpha) * behind[ch];
          }
          const auto& f = p.fp[i];
          const double d_power = d_alpha * it->alpha;
          a[8] += d_alpha * std::exp(it->power);
          a[0] += d_power * (f.ca * it->dx + f.cb * it->dy);
          a[1] += d_power * (f.cb * it->dx + f.cc * it->dy);
          a[2] += d_power * (-0.5 * it->dx * it->dx);
          a[3] += d_power * (-it->dx * it->dy);
          a[4] += d_power * (-0.5 * it->dy * it->dy);
        }
      }
  }

  std::vector<std::array<double, kSlots>> total(n);
  std::vector<std::uint8_t> touched(n, 0);
  for (std::size_t tile = 0; tile < p.tiles.size(); ++tile)
    for (std::size_t k = 0; k < p.tiles[tile].size(); ++k) {
      const int i = p.tiles[tile][k];
      touched[i] = 1;
      for (int s = 0; s < kSlots; ++s) total[i][s] += tile_grad[tile][k * kSlots + s];
    }

  grads.mean.assign(n, Vec3::Zero());
  grads.quat.assign(n, Vec4::Zero());
  grads.scale.assign(n, Vec3::Zero());
  grads.opacity.assign(n, 0.0);
  grads.sh.assign(n, std::vector<double>(3 * nsh, 0.0));
  grads.screen_norm.assign(n, 0.0);
  grads.visible = touched;
  using D = ad::Dual<10>;
  for (std::size_t i = 0; i < n; ++i) {
    if (!touched[i]) continue;
    const Splat& s = splats[i];
    const auto& t = total[i];
    Eigen::Matrix<D, 3, 1> mean, scale;
    std::array<D, 4> quat;
    for (int k = 0; k < 3; ++k) {
      mean[k] = D::variable(s.mean[k], k);
      scale[k] = D::variable(s.scale[k], 7 + k);
    }
    for (int k = 0; k < 4; ++k) quat[k] = D::variable(s.quat[k], 3 + k);
    Footprint<D> fd;
    std::array<D, 16> basis;
    splat_footprint<D>(mean, quat, scale, s.sh, sh_degree, cam, cfg.dilation, fd, basis);
    std::array<double, 10> d{};
    auto add = [&](const D& v, double up) {
      for (int k = 0; k < 10; ++k) d[k] += up * v.d[k];
    };
    add(fd.mx, t[0]);
    add(fd.my, t[1]);
    add(fd.ca, t[2]);
    add(fd.cb, t[3]);
    add(fd.cc, t[4]);
    for (int ch = 0; ch < 3; ++ch) {
      if (fd.color[ch].v < 0.0) continue;
      add(fd.color[ch], t[5 + ch]);
      for (int k = 0; k < nsh; ++k) grads.sh[i][3 * k + ch] = t[5 + ch] * basis[k].v;
    }
    grads.mean[i] = Vec3(d[0], d[1], d[2]);
    grads.quat[i] = Vec4(d[3], d[4], d[5], d[6]);
    grads.scale[i] = Vec3(d[7], d[8], d[9]);
    grads.opacity[i] = t[8];
    grads.screen_norm[i] = std::hypot(t[0] * 0.5 * cam.width, t[1] * 0.5 * cam.height);
  }
  return img;
}

}  // namespace sqb

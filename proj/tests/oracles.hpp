#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance binary. Each one is written from the definitions, without the
// library's tiling, truncation, spatial indices or spanning trees.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include <Eigen/Geometry>

#include "sqb/geometry.hpp"
#include "sqb/rasterizer.hpp"
#include "sqb/splat.hpp"

namespace oracle {

using sqb::Vec2;
using sqb::Vec3;

/// Camera-space point through the pinhole intrinsics.
inline Vec2 project(const Vec3& p, const sqb::Camera& cam) {
  const Eigen::Vector4d c = cam.view * p.homogeneous();
  return {cam.fx * c.x() / c.z() + cam.cx, cam.fy * c.y() / c.z() + cam.cy};
}

/// Stepwise: view, projection, perspective divide, NDC to pixels.
inline Vec2 project_stepwise(const Vec3& p, const sqb::Camera& cam) {
  const Eigen::Vector4d eye = cam.view * p.homogeneous();
  const Eigen::Vector4d clip = cam.proj * eye;
  const Vec2 ndc(clip.x() / clip.w(), clip.y() / clip.w());
  return {(ndc.x() + 1.0) * 0.5 * cam.width, (ndc.y() + 1.0) * 0.5 * cam.height};
}

inline double segment_d2(const Vec2& a, const Vec2& b, const Vec2& p) {
  const Vec2 ab = b - a;
  const double l2 = ab.squaredNorm();
  const double t = l2 > 0.0 ? std::clamp((p - a).dot(ab) / l2, 0.0, 1.0) : 0.0;
  return (a + t * ab - p).squaredNorm();
}

/// Barycentric inside test (boundary counts as inside) and squared distance to
/// the nearest edge.
inline void triangle_query(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& p, bool& inside, double& d2) {
  const double area = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
  const double w0 = ((b - p).x() * (c - p).y() - (b - p).y() * (c - p).x()) / area;
  const double w1 = ((c - p).x() * (a - p).y() - (c - p).y() * (a - p).x()) / area;
  const double w2 = 1.0 - w0 - w1;
  inside = area != 0.0 && w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0;
  d2 = std::min({segment_d2(a, b, p), segment_d2(b, c, p), segment_d2(c, a, p)});
}

struct SoftOracleOutput {
  std::vector<double> silhouette;
  std::vector<Vec3> color;
};

/// Every face of every mesh at every pixel, occupancy alpha inside and
/// alpha exp(-d2 / sigma) outside, ordered by mean vertex depth (ties by mesh
/// then face), blended front to back without a layer limit.
inline SoftOracleOutput soft_render(const std::vector<sqb::PrimitiveMesh>& meshes, const std::vector<double>& alphas,
                                    const std::vector<Vec3>& colors, const sqb::Camera& cam, double sigma,
                                    const Vec3& background) {
  struct Face {
    Vec2 v[3];
    double depth;
    std::size_t mesh;
    std::size_t index;
  };
  std::vector<Face> faces;
  for (std::size_t m = 0; m < meshes.size(); ++m) {
    const auto& list = meshes[m].face_list();
    for (std::size_t f = 0; f < list.size(); ++f) {
      Face face{};
      double depth = 0.0;
      for (int k = 0; k < 3; ++k) {
        const Vec3& p = meshes[m].world_vertices[list[f][k]];
        face.v[k] = project(p, cam);
        depth += (cam.view * p.homogeneous()).z() / 3.0;
      }
      face.depth = depth;
      face.mesh = m;
      face.index = f;
      faces.push_back(face);
    }
  }
  std::stable_sort(faces.begin(), faces.end(), [](const Face& a, const Face& b) { return a.depth < b.depth; });

  SoftOracleOutput out;
  out.silhouette.assign(static_cast<std::size_t>(cam.width) * cam.height, 0.0);
  out.color.assign(out.silhouette.size(), Vec3::Zero());
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const Vec2 p(x + 0.5, y + 0.5);
      double t = 1.0;
      Vec3 c = Vec3::Zero();
      for (const Face& f : faces) {
        bool inside;
        double d2;
        triangle_query(f.v[0], f.v[1], f.v[2], p, inside, d2);
        const double occ = alphas[f.mesh] * (inside ? 1.0 : std::exp(-d2 / sigma));
        c += t * occ * colors[f.mesh];
        t *= 1.0 - occ;
      }
      const std::size_t i = static_cast<std::size_t>(y) * cam.width + x;
      out.silhouette[i] = 1.0 - t;
      out.color[i] = c + t * background;
    }
  return out;
}

/// Exhaustive splat compositing: world covariance R S S^T R^T, EWA screen
/// covariance plus the dilation, every splat at every pixel in depth order.
/// Supports SH degree 0 and 1.
inline sqb::Image splat_render(const std::vector<sqb::Splat>& splats, int sh_degree, const sqb::Camera& cam,
                               const Vec3& background, double dilation) {
  struct Item {
    double depth;
    Vec2 m;
    Eigen::Matrix2d inv;
    Vec3 color;
    double opacity;
  };
  const Eigen::Matrix3d w = cam.view.block<3, 3>(0, 0);
  const Vec3 eye = -w.transpose() * cam.view.block<3, 1>(0, 3);
  std::vector<Item> items;
  for (const auto& s : splats) {
    const Vec3 pc = w * s.mean + cam.view.block<3, 1>(0, 3);
    if (pc.z() <= cam.near) continue;
    const Eigen::Quaterniond q(s.quat[0], s.quat[1], s.quat[2], s.quat[3]);
    const Eigen::Matrix3d r = q.normalized().toRotationMatrix();
    const Eigen::Matrix3d sigma3 = r * s.scale.cwiseAbs2().asDiagonal() * r.transpose();
    Eigen::Matrix<double, 2, 3> j;
    j << cam.fx / pc.z(), 0, -cam.fx * pc.x() / (pc.z() * pc.z()), 0, cam.fy / pc.z(),
        -cam.fy * pc.y() / (pc.z() * pc.z());
    Eigen::Matrix2d cov = j * w * sigma3 * w.transpose() * j.transpose();
    cov(0, 0) += dilation;
    cov(1, 1) += dilation;
    const Vec3 dir = (s.mean - eye).normalized();
    Vec3 color = Vec3::Constant(0.5);
    for (int ch = 0; ch < 3; ++ch) {
      color[ch] += 0.28209479177387814 * s.sh[ch];
      if (sh_degree >= 1) {
        const double c1 = 0.4886025119029199;
        color[ch] += -c1 * dir.y() * s.sh[3 + ch] + c1 * dir.z() * s.sh[6 + ch] - c1 * dir.x() * s.sh[9 + ch];
      }
      color[ch] = std::max(color[ch], 0.0);
    }
    items.push_back({pc.z(), project(s.mean, cam), cov.inverse(), color, s.opacity});
  }
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.depth < b.depth; });
  sqb::Image img(cam.width, cam.height, 3);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      double t = 1.0;
      Vec3 c = Vec3::Zero();
      for (const Item& it : items) {
        const Vec2 d = Vec2(x + 0.5, y + 0.5) - it.m;
        const double a = it.opacity * std::exp(-0.5 * d.dot(it.inv * d));
        c += t * a * it.color;
        t *= 1.0 - a;
      }
      c += t * background;
      for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = c[ch];
    }
  return img;
}

/// O(n^2) symmetric chamfer: mean nearest distance a->b plus b->a.
inline double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  auto one_way = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double s = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, (p - q).squaredNorm());
      s += std::sqrt(best);
    }
    return s / static_cast<double>(from.size());
  };
  return one_way(a, b) + one_way(b, a);
}

/// HDBSCAN by thresholding the complete mutual-reachability graph at every
/// distinct pair weight (no spanning tree), then excess-of-mass selection
/// with the root eligible and ties keeping the parent. Returns labels with
/// -1 for noise; cluster numbering is arbitrary.
inline std::vector<int> hdbscan_labels(const Eigen::MatrixXd& dist, int mcs) {
  const int n = static_cast<int>(dist.rows());
  if (n == 1) return {0};
  std::vector<double> core(n);
  for (int i = 0; i < n; ++i) {
    std::vector<double> row;
    for (int j = 0; j < n; ++j) row.push_back(i == j ? 0.0 : dist(i, j));
    std::sort(row.begin(), row.end());
    core[i] = row[std::min(mcs, n) - 1];
  }
  Eigen::MatrixXd mr(n, n);
  std::vector<double> levels;
  double max_mr = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      mr(i, j) = i == j ? 0.0 : std::max({core[i], core[j], dist(i, j)});
      if (i < j) levels.push_back(mr(i, j));
      max_mr = std::max(max_mr, mr(i, j));
    }
  std::sort(levels.begin(), levels.end(), std::greater<>());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  const double floor_d = max_mr > 0.0 ? 1e-9 * max_mr : 1.0;

  struct Cluster {
    int parent;
    double birth;
    double stability = 0.0;
    std::vector<int> children;
    std::vector<int> live;
  };
  std::vector<Cluster> clusters;
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  clusters.push_back({-1, 0.0, 0.0, {}, all});
  std::vector<int> fell_from(n, -1);

  for (double level : levels) {
    const double lam = 1.0 / std::max(level, floor_d);
    // connected components of {mr < level} by flood fill
    std::vector<int> comp(n, -1);
    int ncomp = 0;
    for (int s = 0; s < n; ++s) {
      if (comp[s] >= 0) continue;
      std::vector<int> stack{s};
      comp[s] = ncomp;
      while (!stack.empty()) {
        const int u = stack.back();
        stack.pop_back();
        for (int v = 0; v < n; ++v)
          if (comp[v] < 0 && v != u && mr(u, v) < level) {
            comp[v] = ncomp;
            stack.push_back(v);
          }
      }
      ++ncomp;
    }
    const std::size_t existing = clusters.size();
    for (std::size_t c = 0; c < existing; ++c) {
      if (clusters[c].live.empty()) continue;
      std::map<int, std::vector<int>> parts;
      for (int p : clusters[c].live) parts[comp[p]].push_back(p);
      if (parts.size() < 2) continue;
      int big = 0;
      for (auto& [k, pts] : parts) big += static_cast<int>(pts.size()) >= mcs;
      std::vector<int> keep;
      for (auto& [k, pts] : parts) {
        const bool is_big = static_cast<int>(pts.size()) >= mcs;
        if (!is_big) {
          for (int p : pts) {
            fell_from[p] = static_cast<int>(c);
            clusters[c].stability += lam - clusters[c].birth;
          }
        } else if (big >= 2) {
          clusters[c].stability += pts.size() * (lam - clusters[c].birth);
          clusters[c].children.push_back(static_cast<int>(clusters.size()));
          clusters.push_back({static_cast<int>(c), lam, 0.0, {}, pts});
        } else {
          keep = pts;
        }
      }
      clusters[c].live = keep;
    }
  }

  const int nc = static_cast<int>(clusters.size());
  std::vector<double> best(nc);
  std::vector<bool> chosen(nc, false);
  for (int c = nc - 1; c >= 0; --c) {
    double sum = 0.0;
    for (int ch : clusters[c].children) sum += best[ch];
    if (clusters[c].children.empty() || clusters[c].stability >= sum) {
      chosen[c] = true;
      best[c] = clusters[c].stability;
    } else {
      best[c] = sum;
    }
  }
  // keep only the topmost chosen cluster on every path
  for (int c = 0; c < nc; ++c)
    for (int a = clusters[c].parent; a >= 0; a = clusters[a].parent)
      if (chosen[a]) chosen[c] = false;
  std::vector<int> labels(n, -1);
  for (int p = 0; p < n; ++p)
    for (int c = fell_from[p]; c >= 0; c = clusters[c].parent)
      if (chosen[c]) {
        labels[p] = c;
        break;
      }
  return labels;
}

/// Same partition with noise in the same places, up to relabelling.
inline bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> fwd, back;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] < 0) != (b[i] < 0)) return false;
    if (a[i] < 0) continue;
    auto [f, fnew] = fwd.emplace(a[i], b[i]);
    auto [r, rnew] = back.emplace(b[i], a[i]);
    if (f->second != b[i] || r->second != a[i]) return false;
  }
  return true;
}

}  // namespace oracle

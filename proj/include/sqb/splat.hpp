#pragma once

// CPU tile splatting of world-space Gaussians with an exact backward pass.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "sqb/autodiff.hpp"
#include "sqb/gaussians.hpp"
#include "sqb/image.hpp"
#include "sqb/rasterizer.hpp"

namespace sqb {

struct Splat {
  Vec3 mean = Vec3::Zero();
  Vec4 quat = Vec4(1, 0, 0, 0);  // need not be normalized
  Vec3 scale = Vec3::Ones();
  double opacity = 1.0;
  std::vector<double> sh;  // 3 per coefficient
};

std::vector<Splat> world_splats(const GaussianScene& gs);

struct SplatRenderConfig {
  Vec3 background = Vec3::Zero();
  int tile_size = 16;
  /// Contributions with alpha below this are skipped; footprints are cut
  /// where o * exp(power) reaches it.
  double alpha_threshold = 1e-8;
  double min_transmittance = 1e-9;
  double dilation = 0.3;  // pixels^2 added to the screen covariance diagonal
  /// Splats whose mean projects outside the image grown by this factor about
  /// its centre are dropped; <= 0 keeps everything in front of the near plane.
  double frustum_margin = 1.3;

  void validate() const;
};

/// Real SH basis up to degree 3 at unit direction d, 3DGS sign convention.
template <typename T>
void sh_basis(const T& x, const T& y, const T& z, int degree, std::array<T, 16>& out) {
  out[0] = T(0.28209479177387814);
  if (degree < 1) return;
  constexpr double c1 = 0.4886025119029199;
  out[1] = -c1 * y;
  out[2] = c1 * z;
  out[3] = -c1 * x;
  if (degree < 2) return;
  const T xx = x * x, yy = y * y, zz = z * z;
  out[4] = 1.0925484305920792 * (x * y);
  out[5] = -1.0925484305920792 * (y * z);
  out[6] = 0.31539156525252005 * (2.0 * zz - xx - yy);
  out[7] = -1.0925484305920792 * (x * z);
  out[8] = 0.5462742152960396 * (xx - yy);
  if (degree < 3) return;
  out[9] = -0.5900435899266435 * (y * (3.0 * xx - yy));
  out[10] = 2.890611442640554 * (x * y * z);
  out[11] = -0.4570457994644658 * (y * (4.0 * zz - xx - yy));
  out[12] = 0.3731763325901154 * (z * (2.0 * zz - 3.0 * xx - 3.0 * yy));
  out[13] = -0.4570457994644658 * (x * (4.0 * zz - xx - yy));
  out[14] = 1.445305721320277 * (z * (xx - yy));
  out[15] = -0.5900435899266435 * (x * (xx - 3.0 * yy));
}

/// Screen-space footprint of one Gaussian: pixel mean, inverse covariance
/// (a, b, c), colour and camera depth.
template <typename T>
struct Footprint {
  T mx, my;
  T ca, cb, cc;
  std::array<T, 3> color;
  double depth = 0.0;
  double cov_xx = 0.0, cov_yy = 0.0;
};

/// Projection of mean/quat/scale through the camera. Returns false when the
/// mean lies at or behind the near plane. `basis` receives the SH values.
template <typename T>
bool splat_footprint(const Eigen::Matrix<T, 3, 1>& mean, const std::array<T, 4>& quat,
                     const Eigen::Matrix<T, 3, 1>& scale, std::span<const double> sh, int sh_degree,
                     const Camera& cam, double dilation, Footprint<T>& fp, std::array<T, 16>& basis) {
  using std::sqrt;
  const Mat3 w = cam.view.block<3, 3>(0, 0);
  Eigen::Matrix<T, 3, 1> pc;
  for (int r = 0; r < 3; ++r) pc[r] = w(r, 0) * mean[0] + w(r, 1) * mean[1] + w(r, 2) * mean[2] + cam.view(r, 3);
  const double z = ad::value_of(pc[2]);
  if (!(z > cam.near)) return false;
  fp.depth = z;

  const T qn = sqrt(quat[0] * quat[0] + quat[1] * quat[1] + quat[2] * quat[2] + quat[3] * quat[3]);
  const Eigen::Matrix<T, 3, 3> rot = quat_to_rotation<T>(quat[0] / qn, quat[1] / qn, quat[2] / qn, quat[3] / qn);
  Eigen::Matrix<T, 3, 3> m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = rot(r, c) * scale[c];
  // camera-space covariance: (W M)(W M)^T
  Eigen::Matrix<T, 3, 3> wm;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) wm(r, c) = w(r, 0) * m(0, c) + w(r, 1) * m(1, c) + w(r, 2) * m(2, c);
  const T iz = 1.0 / pc[2];
  const T j00 = cam.fx * iz, j02 = -cam.fx * pc[0] * iz * iz;
  const T j11 = cam.fy * iz, j12 = -cam.fy * pc[1] * iz * iz;
  std::array<T, 3> row0, row1;  // rows of J W M
  for (int c = 0; c < 3; ++c) {
    row0[c] = j00 * wm(0, c) + j02 * wm(2, c);
    row1[c] = j11 * wm(1, c) + j12 * wm(2, c);
  }
  const T sxx = row0[0] * row0[0] + row0[1] * row0[1] + row0[2] * row0[2] + dilation;
  const T sxy = row0[0] * row1[0] + row0[1] * row1[1] + row0[2] * row1[2];
  const T syy = row1[0] * row1[0] + row1[1] * row1[1] + row1[2] * row1[2] + dilation;
  const T det = sxx * syy - sxy * sxy;
  fp.ca = syy / det;
  fp.cb = -sxy / det;
  fp.cc = sxx / det;
  fp.cov_xx = ad::value_of(sxx);
  fp.cov_yy = ad::value_of(syy);
  fp.mx = cam.fx * pc[0] * iz + cam.cx;
  fp.my = cam.fy * pc[1] * iz + cam.cy;

  const Vec3 eye = cam.center();
  Eigen::Matrix<T, 3, 1> d;
  for (int k = 0; k < 3; ++k) d[k] = mean[k] - eye[k];
  const T dn = sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  sh_basis<T>(d[0] / dn, d[1] / dn, d[2] / dn, sh_degree, basis);
  const int n = (sh_degree + 1) * (sh_degree + 1);
  for (int ch = 0; ch < 3; ++ch) {
    T acc(0.5);
    for (int k = 0; k < n; ++k) acc = acc + basis[k] * sh[3 * k + ch];
    fp.color[ch] = acc;
  }
  return true;
}

/// Optional side outputs of the forward pass.
struct SplatExtras {
  Image* alpha = nullptr;  // 1 - final transmittance
  /// Per-splat flags; `group_weight` receives the summed compositing weight
  /// of the flagged splats.
  const std::vector<std::uint8_t>* group = nullptr;
  Image* group_weight = nullptr;
};

Image splat_render(std::span<const Splat> splats, int sh_degree, const Camera& cam, const SplatRenderConfig& cfg,
                   const SplatExtras& extras = {});

/// Gradients with respect to each splat's world mean, raw quaternion, scale,
/// opacity and SH coefficients.
struct SplatGrads {
  std::vector<Vec3> mean;
  std::vector<Vec4> quat;
  std::vector<Vec3> scale;
  std::vector<double> opacity;
  std::vector<std::vector<double>> sh;
  /// Splats whose footprint overlaps the image.
  std::vector<std::uint8_t> visible;
  /// Norm of dL/d(screen mean) in normalized device units, for densification.
  std::vector<double> screen_norm;
};

/// Backpropagates dL/d(image) (same layout as the rendered image) and returns
/// the forward image. Accumulation order is fixed, results are bit-stable.
Image splat_backward(std::span<const Splat> splats, int sh_degree, const Camera& cam, const SplatRenderConfig& cfg,
                     const Image& d_image, SplatGrads& grads);

}  // namespace sqb

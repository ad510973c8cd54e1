#include "sqb/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

namespace sqb {

KdTree::KdTree(std::span<const Vec3> points) : pts_(points.begin(), points.end()), order_(points.size()) {
  std::iota(order_.begin(), order_.end(), 0u);
  if (!pts_.empty()) build(0, static_cast<std::uint32_t>(pts_.size()), 0);
}

int KdTree::build(std::uint32_t begin, std::uint32_t end, int depth) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= 8) return id;
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(pts_[order_[i]]);
    hi = hi.cwiseMax(pts_[order_[i]]);
  }
  int axis;
  (hi - lo).maxCoeff(&axis);
  (void)depth;
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     if (pts_[a][axis] != pts_[b][axis]) return pts_[a][axis] < pts_[b][axis];
                     return a < b;
                   });
  nodes_[id].axis = axis;
  nodes_[id].split = pts_[order_[mid]][axis];
  const int l = build(begin, mid, depth + 1);
  const int r = build(mid, end, depth + 1);
  nodes_[id].left = l;
  nodes_[id].right = r;
  return id;
}

void KdTree::search(int node, const Vec3& q, std::size_t& best, double& best_d2) const {
  const Node& n = nodes_[node];
  if (n.left < 0) {
    for (std::uint32_t i = n.begin; i < n.end; ++i) {
      const double d2 = (pts_[order_[i]] - q).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && order_[i] < best)) {
        best_d2 = d2;
        best = order_[i];
      }
    }
    return;
  }
  const double diff = q[n.axis] - n.split;
  const int first = diff < 0 ? n.left : n.right;
  const int second = diff < 0 ? n.right : n.left;
  search(first, q, best, best_d2);
  if (diff * diff <= best_d2) search(second, q, best, best_d2);
}

std::pair<std::size_t, double> KdTree::nearest(const Vec3& q) const {
  if (pts_.empty()) throw std::invalid_argument("KdTree::nearest on empty tree");
  std::size_t best = std::numeric_limits<std::size_t>::max();
  double best_d2 = std::numeric_limits<double>::infinity();
  search(0, q, best, best_d2);
  return {best, best_d2};
}

double chamfer(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer: empty point set");
  auto directed = [](std::span<const Vec3> from, std::span<const Vec3> to) {
    const KdTree tree(to);
    double s = 0.0;
    for (const Vec3& p : from) s += std::sqrt(tree.nearest(p).second);
    return s / static_cast<double>(from.size());
  };
  return directed(a, b) + directed(b, a);
}

double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("psnr: image shapes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  const double mse = s / static_cast<double>(a.data.size());
  if (mse == 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

constexpr int kWin = 11;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWin> gaussian_window() {
  std::array<double, kWin> w{};
  double s = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double x = i - kWin / 2;
    w[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
    s += w[i];
  }
  for (double& v : w) v /= s;
  return w;
}

// Valid-region separable filter of one channel: out is (h-10) x (w-10).
std::vector<double> filter_valid(const std::vector<double>& img, int w, int h) {
  static const auto g = gaussian_window();
  const int ow = w - kWin + 1, oh = h - kWin + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h), out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) s += g[k] * img[static_cast<std::size_t>(y) * w + x + k];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) s += g[k] * tmp[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

// Adjoint of filter_valid: spreads an (h-10) x (w-10) field back to h x w.
std::vector<double> filter_valid_adjoint(const std::vector<double>& f, int w, int h) {
  static const auto g = gaussian_window();
  const int ow = w - kWin + 1, oh = h - kWin + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h, 0.0), out(static_cast<std::size_t>(w) * h, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      for (int k = 0; k < kWin; ++k)
        tmp[static_cast<std::size_t>(y + k) * ow + x] += g[k] * f[static_cast<std::size_t>(y) * ow + x];
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x)
      for (int k = 0; k < kWin; ++k)
        out[static_cast<std::size_t>(y) * w + x + k] += g[k] * tmp[static_cast<std::size_t>(y) * ow + x];
  return out;
}

double ssim_impl(const Image& a, const Image& b, std::vector<double>* grad_a) {
  if (!a.same_shape(b)) throw ShapeMismatch("ssim: image shapes differ");
  const int w = a.width, h = a.height, nc = a.channels;
  if (w < kWin || h < kWin) throw ShapeMismatch("ssim: image smaller than the 11x11 window");
  const std::size_t npix = a.pixel_count();
  const std::size_t nvalid = static_cast<std::size_t>(w - kWin + 1) * (h - kWin + 1);
  if (grad_a) grad_a->assign(a.data.size(), 0.0);
  double total = 0.0;
  for (int c = 0; c < nc; ++c) {
    std::vector<double> x(npix), y(npix), xx(npix), yy(npix), xy(npix);
    for (std::size_t p = 0; p < npix; ++p) {
      x[p] = a.data[p * nc + c];
      y[p] = b.data[p * nc + c];
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    const auto mx = filter_valid(x, w, h), my = filter_valid(y, w, h);
    const auto sxx = filter_valid(xx, w, h), syy = filter_valid(yy, w, h), sxy = filter_valid(xy, w, h);
    double sum = 0.0;
    std::vector<double> ga, gb, gc;
    if (grad_a) {
      ga.resize(nvalid);
      gb.resize(nvalid);
      gc.resize(nvalid);
    }
    for (std::size_t i = 0; i < nvalid; ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cxy = sxy[i] - mx[i] * my[i];
      const double a1 = 2.0 * mx[i] * my[i] + kC1, a2 = 2.0 * cxy + kC2;
      const double b1 = mx[i] * mx[i] + my[i] * my[i] + kC1, b2 = vx + vy + kC2;
      const double s = (a1 * a2) / (b1 * b2);
      sum += s;
      if (grad_a) {
        // partials with respect to mu_x, var_x and cov_xy
        const double d_mx = (2.0 * my[i] * a2) / (b1 * b2) - s * 2.0 * mx[i] / b1;
        const double d_vx = -s / b2;
        const double d_cxy = 2.0 * a1 / (b1 * b2);
        ga[i] = d_mx - 2.0 * mx[i] * d_vx - my[i] * d_cxy;
        gb[i] = d_vx;
        gc[i] = d_cxy;
      }
    }
    total += sum / static_cast<double>(nvalid);
    if (grad_a) {
      const auto fa = filter_valid_adjoint(ga, w, h);
      const auto fb = filter_valid_adjoint(gb, w, h);
      const auto fc = filter_valid_adjoint(gc, w, h);
      const double scale = 1.0 / (static_cast<double>(nvalid) * nc);
      for (std::size_t p = 0; p < npix; ++p)
        (*grad_a)[p * nc + c] = scale * (fa[p] + 2.0 * x[p] * fb[p] + y[p] * fc[p]);
    }
  }
  return total / nc;
}

}  // namespace

double ssim(const Image& a, const Image& b) { return ssim_impl(a, b, nullptr); }

double ssim_with_grad(const Image& a, const Image& b, std::vector<double>& grad_a) {
  return ssim_impl(a, b, &grad_a);
}

double mask_iou(const Image& a, const Image& b, double threshold) {
  if (!a.same_shape(b)) throw ShapeMismatch("mask_iou: shapes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool pa = a.data[i] >= threshold, pb = b.data[i] >= threshold;
    inter += pa && pb;
    uni += pa || pb;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace sqb

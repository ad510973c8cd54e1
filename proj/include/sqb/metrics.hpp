#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sqb/common.hpp"
#include "sqb/image.hpp"

namespace sqb {

/// Static 3-d tree for exact nearest-neighbour queries.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points);
  /// Index and squared distance of the nearest point; ties keep the lower index.
  std::pair<std::size_t, double> nearest(const Vec3& q) const;
  std::size_t size() const { return pts_.size(); }

 private:
  struct Node {
    std::uint32_t begin, end;
    std::int32_t left = -1, right = -1;
    int axis = 0;
    double split = 0.0;
  };
  int build(std::uint32_t begin, std::uint32_t end, int depth);
  void search(int node, const Vec3& q, std::size_t& best, double& best_d2) const;

  std::vector<Vec3> pts_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

/// Mean nearest-neighbour distance a->b plus b->a.
double chamfer(std::span<const Vec3> a, std::span<const Vec3> b);

/// 10 log10(1/MSE), 100 for identical images. Throws ShapeMismatch.
double psnr(const Image& a, const Image& b);

/// Mean SSIM over the valid region, 11x11 Gaussian window (sigma 1.5),
/// c1 = 0.01^2, c2 = 0.03^2, averaged over channels.
double ssim(const Image& a, const Image& b);
/// SSIM value and its gradient with respect to `a`.
double ssim_with_grad(const Image& a, const Image& b, std::vector<double>& grad_a);

/// Intersection over union of masks thresholded at `threshold`.
double mask_iou(const Image& a, const Image& b, double threshold = 0.5);

}  // namespace sqb

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sqb/common.hpp"

namespace sqb {

/// Row-major interleaved image with double samples, nominally in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

/// Integer label image (part masks). 0 is background.
struct LabelImage {
  int width = 0;
  int height = 0;
  std::vector<std::int32_t> labels;

  std::int32_t at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

/// 8-bit PNG, 1 or 3 channels. Samples are clamped to [0,1] and rounded.
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

/// Palette-indexed PNG whose indices are the labels (max 255 labels).
void write_label_png(const std::filesystem::path& path, const LabelImage& labels);
LabelImage read_label_png(const std::filesystem::path& path);

}  // namespace sqb

#include "sqb/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace sqb {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw Error("cannot open " + path.string());
  return f;
}

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  (void)png;
  throw Error(std::string("png: ") + msg);
}

void png_warn(png_structp, png_const_charp) {}

struct WriteCtx {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~WriteCtx() { png_destroy_write_struct(&png, &info); }
};

struct ReadCtx {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~ReadCtx() { png_destroy_read_struct(&png, &info, nullptr); }
};

void write_rows(const std::filesystem::path& path, int w, int h, int color_type,
                const std::vector<std::uint8_t>& bytes, int row_bytes, const std::vector<png_color>* palette) {
  FilePtr f = open_file(path, "wb");
  WriteCtx ctx;
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  ctx.info = png_create_info_struct(ctx.png);
  png_init_io(ctx.png, f.get());
  png_set_IHDR(ctx.png, ctx.info, w, h, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  if (palette) png_set_PLTE(ctx.png, ctx.info, palette->data(), static_cast<int>(palette->size()));
  png_write_info(ctx.png, ctx.info);
  for (int y = 0; y < h; ++y)
    png_write_row(ctx.png, const_cast<png_bytep>(bytes.data() + static_cast<std::size_t>(y) * row_bytes));
  png_write_end(ctx.png, nullptr);
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("write_png: 1 or 3 channels");
  std::vector<std::uint8_t> bytes(img.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
  write_rows(path, img.width, img.height, img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, bytes,
             img.width * img.channels, nullptr);
}

Image read_png(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  ReadCtx ctx;
  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  ctx.info = png_create_info_struct(ctx.png);
  png_init_io(ctx.png, f.get());
  png_read_info(ctx.png, ctx.info);
  const int w = static_cast<int>(png_get_image_width(ctx.png, ctx.info));
  const int h = static_cast<int>(png_get_image_height(ctx.png, ctx.info));
  const int ct = png_get_color_type(ctx.png, ctx.info);
  if (png_get_bit_depth(ctx.png, ctx.info) == 16) png_set_strip_16(ctx.png);
  if (ct == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(ctx.png);
  if (ct == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(ctx.png, ctx.info) < 8) png_set_expand_gray_1_2_4_to_8(ctx.png);
  if (ct & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(ctx.png);
  png_read_update_info(ctx.png, ctx.info);
  const int channels = png_get_channels(ctx.png, ctx.info);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * channels);
  Image img(w, h, channels);
  for (int y = 0; y < h; ++y) {
    png_read_row(ctx.png, row.data(), nullptr);
    for (std::size_t i = 0; i < row.size(); ++i)
      img.data[static_cast<std::size_t>(y) * row.size() + i] = row[i] / 255.0;
  }
  png_read_end(ctx.png, nullptr);
  return img;
}

void write_label_png(const std::filesystem::path& path, const LabelImage& labels) {
  std::vector<std::uint8_t> bytes(labels.labels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (labels.labels[i] < 0 || labels.labels[i] > 255) throw std::invalid_argument("label outside [0,255]");
    bytes[i] = static_cast<std::uint8_t>(labels.labels[i]);
  }
  std::vector<png_color> palette(256);
  for (int i = 0; i < 256; ++i) {
    // distinct-ish colours for viewing; index carries the label
    palette[i] = {static_cast<png_byte>((i * 97) & 255), static_cast<png_byte>((i * 57) & 255),
                  static_cast<png_byte>((i * 151) & 255)};
  }
  write_rows(path, labels.width, labels.height, PNG_COLOR_TYPE_PALETTE, bytes, labels.width, &palette);
}

LabelImage read_label_png(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  ReadCtx ctx;
  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  ctx.info = png_create_info_struct(ctx.png);
  png_init_io(ctx.png, f.get());
  png_read_info(ctx.png, ctx.info);
  const int w = static_cast<int>(png_get_image_width(ctx.png, ctx.info));
  const int h = static_cast<int>(png_get_image_height(ctx.png, ctx.info));
  const int ct = png_get_color_type(ctx.png, ctx.info);
  if (png_get_bit_depth(ctx.png, ctx.info) != 8 || (ct != PNG_COLOR_TYPE_PALETTE && ct != PNG_COLOR_TYPE_GRAY))
    throw Error("label png must be 8-bit palette or gray: " + path.string());
  png_read_update_info(ctx.png, ctx.info);
  LabelImage out{w, h, std::vector<std::int32_t>(static_cast<std::size_t>(w) * h)};
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    png_read_row(ctx.png, row.data(), nullptr);
    for (int x = 0; x < w; ++x) out.labels[static_cast<std::size_t>(y) * w + x] = row[x];
  }
  png_read_end(ctx.png, nullptr);
  return out;
}

}  // namespace sqb

#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "attentionmask/core.hpp"

namespace am {

// 8-bit RGB image, row-major, 3 bytes per pixel.
struct ImageU8 {
  int h = 0, w = 0;
  std::vector<std::uint8_t> px;

  ImageU8() = default;
  ImageU8(int h_, int w_) : h(h_), w(w_), px(std::size_t(h_) * w_ * 3, 0) {}

  std::uint8_t& at(int y, int x, int ch) { return px[(std::size_t(y) * w + x) * 3 + ch]; }
  std::uint8_t at(int y, int x, int ch) const { return px[(std::size_t(y) * w + x) * 3 + ch]; }
};

inline Tensor to_tensor(const ImageU8& im) {
  Tensor t(im.h, im.w, 3);
  for (std::size_t i = 0; i < im.px.size(); ++i) t.v[i] = im.px[i] / 255.0;
  return t;
}

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

inline void write_png_rgb(const std::string& path, const ImageU8& im) {
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, im.w, im.h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(im.h);
  for (int y = 0; y < im.h; ++y) rows[y] = const_cast<png_bytep>(&im.px[std::size_t(y) * im.w * 3]);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline void write_png_gray(const std::string& path, const std::vector<std::uint8_t>& gray, int h,
                           int w) {
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = const_cast<png_bytep>(&gray[std::size_t(y) * w]);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline ImageU8 read_png_rgb(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open for reading: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png read failed: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  ImageU8 im(int(png_get_image_height(png, info)), int(png_get_image_width(png, info)));
  if (png_get_rowbytes(png, info) != std::size_t(im.w) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unexpected png row size: " + path);
  }
  std::vector<png_bytep> rows(im.h);
  for (int y = 0; y < im.h; ++y) rows[y] = &im.px[std::size_t(y) * im.w * 3];
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return im;
}

// Bilinear sample of a single-channel grid at fractional coordinates
// (align-corners-false convention, clamped at edges).
inline double bilinear_at(const std::vector<double>& g, int h, int w, double y, double x) {
  auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
  int y0 = int(std::floor(y)), x0 = int(std::floor(x));
  double fy = y - y0, fx = x - x0;
  int y0c = clampi(y0, 0, h - 1), y1c = clampi(y0 + 1, 0, h - 1);
  int x0c = clampi(x0, 0, w - 1), x1c = clampi(x0 + 1, 0, w - 1);
  double a = g[std::size_t(y0c) * w + x0c], b = g[std::size_t(y0c) * w + x1c];
  double c = g[std::size_t(y1c) * w + x0c], d = g[std::size_t(y1c) * w + x1c];
  return a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx;
}

inline std::vector<double> bilinear_resize(const std::vector<double>& g, int h, int w, int oh,
                                           int ow) {
  std::vector<double> out(std::size_t(oh) * ow, 0.0);
  double sy = double(h) / oh, sx = double(w) / ow;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      out[std::size_t(y) * ow + x] =
          bilinear_at(g, h, w, (y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5);
  return out;
}

}  // namespace am

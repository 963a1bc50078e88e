#include "mseg/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "mseg/errors.hpp"

namespace mseg::img {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

ImageU8 read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw NotFoundError("cannot open " + path);

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw FormatError("not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng init failed");
  }

  ImageU8 im;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("corrupt PNG: " + path);
  }

  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color_type = png_get_color_type(png, info);
  const int bit_depth = png_get_bit_depth(png, info);

  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("unsupported PNG channel count in " + path);
  }

  im = ImageU8(static_cast<int>(h), static_cast<int>(w), channels);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = im.pixels.data() + static_cast<std::size_t>(y) * w * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return im;
}

void write_png(const std::string& path, const ImageU8& im) {
  if (im.channels != 1 && im.channels != 3)
    throw ArgumentError("write_png: only 1- or 3-channel images");
  if (im.h < 1 || im.w < 1) throw ArgumentError("write_png: empty image");

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG write failed: " + path);
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, im.w, im.h, 8,
               im.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_bytep> rows(im.h);
  for (int y = 0; y < im.h; ++y)
    rows[y] = const_cast<png_bytep>(im.pixels.data()) +
              static_cast<std::size_t>(y) * im.w * im.channels;
  png_write_rows(png, rows.data(), static_cast<png_uint_32>(im.h));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor to_chw(const ImageU8& im) {
  Tensor t({im.channels, im.h, im.w});
  const std::int64_t plane = static_cast<std::int64_t>(im.h) * im.w;
  for (int y = 0; y < im.h; ++y)
    for (int x = 0; x < im.w; ++x)
      for (int c = 0; c < im.channels; ++c)
        t[c * plane + static_cast<std::int64_t>(y) * im.w + x] = im.at(y, x, c) / 255.0;
  return t;
}

ImageU8 from_chw(const Tensor& t) {
  if (t.rank() != 3) throw ArgumentError("from_chw: expects (C,H,W)");
  const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
  if (c != 1 && c != 3) throw ArgumentError("from_chw: only 1 or 3 channels");
  ImageU8 im(h, w, c);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        const double v = std::clamp(t[ch * plane + static_cast<std::int64_t>(y) * w + x], 0.0, 1.0);
        im.at(y, x, ch) = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return im;
}

ImageU8 resize_bilinear(const ImageU8& im, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ArgumentError("resize_bilinear: empty target");
  if (out_h == im.h && out_w == im.w) return im;
  ImageU8 out(out_h, out_w, im.channels);
  // Align-corners-free mapping: sample at pixel centers.
  const double sy = static_cast<double>(im.h) / out_h;
  const double sx = static_cast<double>(im.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, im.h - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, im.h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, im.w - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, im.w - 1);
      const double wx = fx - x0;
      for (int c = 0; c < im.channels; ++c) {
        const double top = (1.0 - wx) * im.at(y0, x0, c) + wx * im.at(y0, x1, c);
        const double bot = (1.0 - wx) * im.at(y1, x0, c) + wx * im.at(y1, x1, c);
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround((1.0 - wy) * top + wy * bot));
      }
    }
  }
  return out;
}

}  // namespace mseg::img

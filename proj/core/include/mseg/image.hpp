#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mseg/tensor.hpp"

namespace mseg::img {

// 8-bit interleaved image, 1 (gray/mask) or 3 (RGB) channels.
struct ImageU8 {
  int h = 0, w = 0, channels = 0;
  std::vector<std::uint8_t> pixels;

  ImageU8() = default;
  ImageU8(int h_, int w_, int c)
      : h(h_), w(w_), channels(c),
        pixels(static_cast<std::size_t>(h_) * w_ * c, 0) {}

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * w + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * w + x) * channels + c];
  }
};

ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& im);

// u8 interleaved <-> double planar (C,H,W) in [0,1].
Tensor to_chw(const ImageU8& im);
ImageU8 from_chw(const Tensor& t);

ImageU8 resize_bilinear(const ImageU8& im, int out_h, int out_w);

}  // namespace mseg::img

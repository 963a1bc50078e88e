#pragma once

#include <string>
#include <vector>

#include "mseg/tensor.hpp"

namespace mseg::flow {

// Dense per-pixel displacement in pixels/frame, (u, v) interleaved row-major.
// By convention flow at frame t maps frame t-1 content onto frame t's grid:
// frame_t(p) == frame_{t-1}(p - flow_t(p)).
struct FlowField {
  int h = 0, w = 0;
  std::vector<float> data;

  FlowField() = default;
  FlowField(int h_, int w_) : h(h_), w(w_), data(static_cast<std::size_t>(h_) * w_ * 2, 0.f) {}

  float u(int y, int x) const { return data[(static_cast<std::size_t>(y) * w + x) * 2]; }
  float v(int y, int x) const { return data[(static_cast<std::size_t>(y) * w + x) * 2 + 1]; }
  void set(int y, int x, float uu, float vv) {
    data[(static_cast<std::size_t>(y) * w + x) * 2] = uu;
    data[(static_cast<std::size_t>(y) * w + x) * 2 + 1] = vv;
  }
  bool all_finite() const;
};

// Binary format: magic "FLO1", two little-endian int32 (H then W), then
// H*W*2 little-endian float32, row-major, u before v per pixel.
FlowField read_flo(const std::string& path);
void write_flo(const std::string& path, const FlowField& f);

// (2,H,W) double tensor, channel 0 = u, channel 1 = v.
Tensor to_tensor(const FlowField& f);

}  // namespace mseg::flow

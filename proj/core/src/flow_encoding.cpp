#include "mseg/flow_encoding.hpp"

#include <array>
#include <cmath>

#include "mseg/errors.hpp"

namespace mseg::flow {

namespace {

constexpr int kRY = 15, kYG = 6, kGC = 4, kCB = 11, kBM = 13, kMR = 6;
constexpr int kNcols = kRY + kYG + kGC + kCB + kBM + kMR;  // 55

std::array<std::array<double, 3>, kNcols> build_wheel() {
  std::array<std::array<double, 3>, kNcols> w{};
  int k = 0;
  for (int i = 0; i < kRY; ++i, ++k) w[k] = {1.0, static_cast<double>(i) / kRY, 0.0};
  for (int i = 0; i < kYG; ++i, ++k) w[k] = {1.0 - static_cast<double>(i) / kYG, 1.0, 0.0};
  for (int i = 0; i < kGC; ++i, ++k) w[k] = {0.0, 1.0, static_cast<double>(i) / kGC};
  for (int i = 0; i < kCB; ++i, ++k) w[k] = {0.0, 1.0 - static_cast<double>(i) / kCB, 1.0};
  for (int i = 0; i < kBM; ++i, ++k) w[k] = {static_cast<double>(i) / kBM, 0.0, 1.0};
  for (int i = 0; i < kMR; ++i, ++k) w[k] = {1.0, 0.0, 1.0 - static_cast<double>(i) / kMR};
  return w;
}

const std::array<std::array<double, 3>, kNcols>& wheel() {
  static const auto w = build_wheel();
  return w;
}

}  // namespace

Tensor flow_to_colorwheel(const FlowField& f, double magnitude_cap) {
  if (magnitude_cap <= 0.0) throw ArgumentError("flow_to_colorwheel: cap must be positive");
  if (!f.all_finite()) throw ArgumentError("flow_to_colorwheel: non-finite flow values");

  const auto& w = wheel();
  Tensor out({3, f.h, f.w});
  const std::int64_t plane = static_cast<std::int64_t>(f.h) * f.w;
  for (int y = 0; y < f.h; ++y)
    for (int x = 0; x < f.w; ++x) {
      const double u = f.u(y, x), v = f.v(y, x);
      const double rad = std::min(std::hypot(u, v), magnitude_cap) / magnitude_cap;
      const double a = std::atan2(-v, -u) / M_PI;  // [-1, 1]
      const double fk = (a + 1.0) / 2.0 * (kNcols - 1);
      const int k0 = std::min(static_cast<int>(fk), kNcols - 1);
      const int k1 = (k0 + 1) % kNcols;
      const double t = fk - k0;
      const std::int64_t p = static_cast<std::int64_t>(y) * f.w + x;
      for (int c = 0; c < 3; ++c) {
        const double col = (1.0 - t) * w[k0][c] + t * w[k1][c];
        out[c * plane + p] = 1.0 - rad * (1.0 - col);
      }
    }
  return out;
}

}  // namespace mseg::flow

#include "mseg/flowio.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "mseg/errors.hpp"

namespace mseg::flow {

namespace {

constexpr char kMagic[4] = {'F', 'L', 'O', '1'};

void put_i32(std::string& buf, std::int32_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
  buf.push_back(static_cast<char>((v >> 16) & 0xff));
  buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::int32_t get_i32(const unsigned char* p) {
  return static_cast<std::int32_t>(static_cast<std::uint32_t>(p[0]) |
                                   (static_cast<std::uint32_t>(p[1]) << 8) |
                                   (static_cast<std::uint32_t>(p[2]) << 16) |
                                   (static_cast<std::uint32_t>(p[3]) << 24));
}

float get_f32(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                             (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) |
                             (static_cast<std::uint32_t>(p[3]) << 24);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

void put_f32(std::string& buf, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_i32(buf, static_cast<std::int32_t>(bits));
}

}  // namespace

bool FlowField::all_finite() const {
  for (float f : data)
    if (!std::isfinite(f)) return false;
  return true;
}

FlowField read_flo(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path);
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (raw.size() < 12 || std::memcmp(raw.data(), kMagic, 4) != 0)
    throw FormatError("bad flow magic in " + path);
  const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
  const std::int32_t h = get_i32(p + 4);
  const std::int32_t w = get_i32(p + 8);
  if (h < 1 || w < 1 || h > 1 << 20 || w > 1 << 20)
    throw FormatError("bad flow dimensions in " + path);
  const std::size_t need = 12 + static_cast<std::size_t>(h) * w * 2 * 4;
  if (raw.size() != need) throw FormatError("truncated flow file " + path);
  FlowField f(h, w);
  for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = get_f32(p + 12 + i * 4);
  return f;
}

void write_flo(const std::string& path, const FlowField& f) {
  if (f.h < 1 || f.w < 1) throw ArgumentError("write_flo: empty field");
  std::string buf;
  buf.reserve(12 + f.data.size() * 4);
  buf.append(kMagic, 4);
  put_i32(buf, f.h);
  put_i32(buf, f.w);
  for (float v : f.data) put_f32(buf, v);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write to " + path);
}

Tensor to_tensor(const FlowField& f) {
  Tensor t({2, f.h, f.w});
  const std::int64_t plane = static_cast<std::int64_t>(f.h) * f.w;
  for (int y = 0; y < f.h; ++y)
    for (int x = 0; x < f.w; ++x) {
      t[static_cast<std::int64_t>(y) * f.w + x] = f.u(y, x);
      t[plane + static_cast<std::int64_t>(y) * f.w + x] = f.v(y, x);
    }
  return t;
}

}  // namespace mseg::flow

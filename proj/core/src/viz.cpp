#include "mseg/viz.hpp"

#include <array>
#include <filesystem>

#include "mseg/errors.hpp"
#include "mseg/evaluation.hpp"
#include "mseg/flow_encoding.hpp"

namespace mseg::viz {
namespace {

namespace fs = std::filesystem;

constexpr std::array<std::uint8_t, 3> kStatic{40, 40, 40};
constexpr std::array<std::uint8_t, 3> kMoving{235, 88, 24};
constexpr std::array<std::uint8_t, 3> kIgnore{128, 128, 128};

void blit(img::ImageU8& dst, const img::ImageU8& src, int y_off) {
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x)
      for (int c = 0; c < 3; ++c) dst.at(y_off + y, x, c) = src.at(y, x, c);
}

}  // namespace

img::ImageU8 render_mask(const data::MotionMask& m) {
  img::ImageU8 out(m.h, m.w, 3);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      const std::uint8_t v = m.at(y, x);
      const auto& color = v == 0 ? kStatic : v == 1 ? kMoving : kIgnore;
      if (v != 0 && v != 1 && v != 255)
        throw ArgumentError("mask value " + std::to_string(v) + " has no color");
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = color[c];
    }
  return out;
}

img::ImageU8 render_absent(int h, int w) {
  if (h <= 0 || w <= 0) throw ArgumentError("placeholder size must be positive");
  img::ImageU8 out(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::uint8_t v = ((x + y) / 4) % 2 ? 96 : 56;
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = v;
    }
  return out;
}

img::ImageU8 compose_panel(const Tensor& rgb, const flow::FlowField& fl,
                           const data::MotionMask* target, const data::MotionMask& prediction,
                           const PanelSpec& spec) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw ArgumentError("panel expects a (3,H,W) frame");
  const int h = rgb.dim(1), w = rgb.dim(2);
  if (fl.h != h || fl.w != w || prediction.h != h || prediction.w != w ||
      (target && (target->h != h || target->w != w)))
    throw ArgumentError("panel strips must share the frame size");
  if (spec.margin < 0) throw ArgumentError("margin must be non-negative");

  const int rows = 4;
  img::ImageU8 panel(rows * h + (rows - 1) * spec.margin, w, 3);
  for (auto& px : panel.pixels) px = spec.separator;

  blit(panel, img::from_chw(rgb), 0);
  blit(panel, img::from_chw(flow::flow_to_colorwheel(fl, spec.flow_cap)), h + spec.margin);
  blit(panel, target ? render_mask(*target) : render_absent(h, w), 2 * (h + spec.margin));
  blit(panel, render_mask(prediction), 3 * (h + spec.margin));
  return panel;
}

img::ImageU8 panel_for_sample(net::Model& model, const data::SequenceSample& sample,
                              const PanelSpec& spec) {
  const auto out = model.forward(sample, false);
  const data::MotionMask pred = eval::argmax_mask(out.logits->value);
  return compose_panel(sample.frames.back().image, sample.flows.back(), &sample.target, pred,
                       spec);
}

int write_panels(net::Model& model, const std::string& root, const std::string& out_dir,
                 int limit, const PanelSpec& spec) {
  if (limit < 1) throw ArgumentError("panel limit must be positive");
  const auto seqs = data::list_sequences(root);
  if (seqs.empty()) throw NotFoundError("no sequences under " + root);
  fs::create_directories(out_dir);
  int written = 0;
  for (const auto& seq : seqs) {
    const int len = data::sequence_length(root, seq);
    for (int end = model.cfg.T - 1; end < len && written < limit; ++end) {
      const auto sample = data::load_sequence(root, seq, end, model.cfg.T);
      const auto panel = panel_for_sample(model, sample, spec);
      img::write_png(out_dir + "/" + seq + "_" + data::frame_name(end) + ".png", panel);
      ++written;
    }
    if (written >= limit) break;
  }
  return written;
}

}  // namespace mseg::viz

#pragma once

#include <string>

#include "mseg/datamodel.hpp"
#include "mseg/flowio.hpp"
#include "mseg/image.hpp"
#include "mseg/network.hpp"

namespace mseg::viz {

struct PanelSpec {
  int margin = 2;               // separator rows between strips
  double flow_cap = 16.0;       // magnitude mapped to full color saturation
  std::uint8_t separator = 16;  // separator gray level
};

// Mask colors: background dark gray, moving orange, ignore mid gray.
img::ImageU8 render_mask(const data::MotionMask& m);

// Diagonal-hatch placeholder strip for a missing reference mask.
img::ImageU8 render_absent(int h, int w);

// Stacks four equally sized strips top to bottom: the RGB frame, its flow on
// the color wheel, the reference mask (hatched when target is null), and the
// predicted mask. Output is (4*H + 3*margin) x W.
img::ImageU8 compose_panel(const Tensor& rgb, const flow::FlowField& fl,
                           const data::MotionMask* target, const data::MotionMask& prediction,
                           const PanelSpec& spec = {});

// Runs the model on the sample's window and composes the standard panel for
// the last frame.
img::ImageU8 panel_for_sample(net::Model& model, const data::SequenceSample& sample,
                              const PanelSpec& spec = {});

// Writes up to `limit` panels (earliest windows first, spanning sequences in
// sorted order) into out_dir as <sequence>_<end index>.png. Returns the
// number written.
int write_panels(net::Model& model, const std::string& root, const std::string& out_dir,
                 int limit = 8, const PanelSpec& spec = {});

}  // namespace mseg::viz

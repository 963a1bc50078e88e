#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mseg/autograd.hpp"
#include "mseg/datamodel.hpp"
#include "mseg/layers.hpp"
#include "mseg/rng.hpp"

namespace mseg::net {

using ag::Var;

enum class Variant {
  RGB_ONLY,
  RGB_FLOW,
  STACKING,
  CONV3D,
  EARLY_LSTM,
  LATE_LSTM,
  MULTI_LSTM,
  MULTI_GRU,
  MULTI_2FILTERS,
};

Variant variant_from_string(const std::string& name);  // ArgumentError on unknown
std::string to_string(Variant v);
const std::vector<Variant>& all_variants();

// Consumes the whole T-frame window (vs. last frame only).
bool uses_window(Variant v);
// Carries recurrent state across frames.
bool is_recurrent(Variant v);
// Runs two encoder branches (appearance + motion).
bool two_stream(Variant v);

struct ModelConfig {
  Variant variant = Variant::RGB_ONLY;
  int T = 4;
  int num_classes = 2;
  int groups = 3;
  int stem = 24;
  std::array<int, 3> stages{48, 96, 192};
  std::array<int, 3> depths{2, 2, 2};
  std::array<int, 3> fuse{24, 48, 48};  // fused widths at strides 8, 16, 32
  int cell_kernel = 3;
  bool residual_cells = true;  // stage output = input + hidden
  double flow_cap = 16.0;

  static ModelConfig desk(Variant v, int T = 4);
  static ModelConfig tiny(Variant v, int T = 2);  // minimal dims for tests
  static ModelConfig full(Variant v, int T = 4);
  void validate() const;  // throws ArgumentError
};

struct Pyramid {
  Var s4, s8, s16, s32;
};

// ShuffleNet v1 unit: grouped 1x1 -> shuffle -> depthwise 3x3 -> grouped 1x1,
// residual add at stride 1, avgpool shortcut + concat at stride 2.
struct ShuffleUnit {
  ShuffleUnit(nn::ParamStore& store, const std::string& name, int cin, int cout, int stride,
              int g_first, int groups, Rng& rng);
  Var forward(Var x, bool training);

  int stride, g1, g2;
  nn::Conv2d gconv1, dwconv, gconv2;
  nn::BatchNorm2d bn1, bn2, bn3;
};

// One encoder branch producing the stride-4/8/16/32 pyramid.
struct Stream {
  Stream(nn::ParamStore& store, const std::string& prefix, int in_channels,
         const ModelConfig& cfg, bool stem_3d, Rng& rng);

  Pyramid forward(Var x, bool training);  // 2-d stem
  Pyramid forward_window(const std::vector<Var>& frames, bool training);  // 3-d stem

  std::optional<nn::Conv2d> stem2d;
  std::optional<nn::Conv3d> stem3d;
  nn::BatchNorm2d stem_bn;
  std::vector<ShuffleUnit> units;
  std::array<int, 3> stage_start{};  // index of each stage's first unit

 private:
  Pyramid after_stem(Var s2_features, bool training);
};

// Channel concat of two equal-resolution maps followed by a linear 1x1 conv.
struct FuseBlock {
  FuseBlock(nn::ParamStore& store, const std::string& name, int c_a, int c_b, int c_out,
            Rng& rng);
  Var forward(Var a, Var b);
  nn::Conv2d conv;
};

// FCN8s head: per-skip score convs, two x2 transposed convs with skip
// addition, and a final x8 transposed conv back to input resolution.
struct Decoder {
  Decoder(nn::ParamStore& store, const std::string& prefix, int c8, int c16, int c32,
          int num_classes, bool external_score32, Rng& rng);

  Var score_32(Var f32);  // absent when external_score32
  Var score_16(Var f16);
  Var score_8(Var f8);
  Var up_x2_1(Var x, int out_h, int out_w);
  Var up_x2_2(Var x, int out_h, int out_w);
  Var up_x8(Var x, int out_h, int out_w);

  std::optional<nn::Conv2d> score32;
  nn::Conv2d score16, score8;
  nn::ConvTranspose2d up1, up2, up8;
};

// Either cell type behind one interface so stages can hold any of them.
struct TemporalCell {
  TemporalCell(nn::ParamStore& store, const std::string& name, int channels, int kernel,
               bool lstm, Rng& rng);
  void reset(int h, int w);
  Var step(Var x);  // advances internal state, returns hidden (or x + hidden)

  bool lstm;
  bool residual = true;
  std::optional<nn::ConvLSTMCell> lstm_cell;
  std::optional<nn::ConvGRUCell> gru_cell;
  nn::ConvLSTMCell::State lstm_state;
  Var gru_state;
};

struct ForwardResult {
  Var logits;                   // (num_classes, H, W) for the last frame
  std::vector<Var> per_frame;   // recurrent variants: one entry per frame
};

struct Model {
  explicit Model(const ModelConfig& cfg, std::uint64_t seed = 77);

  // Frames are (3,H,W) in [0,1]; flows are raw fields, encoded internally.
  ForwardResult forward(const data::SequenceSample& sample, bool training);
  // Tensor-level entry used by both forward() and tests: per-frame RGB and
  // already-encoded flow maps.
  ForwardResult forward_encoded(const std::vector<Tensor>& rgb, const std::vector<Tensor>& flow,
                                bool training);

  std::int64_t param_count() const;

  ModelConfig cfg;
  nn::ParamStore store;
  std::optional<Stream> rgb_stream;   // absent only for pure stacking input
  std::optional<Stream> flow_stream;  // two-stream variants
  std::optional<Stream> joint_stream;  // STACKING
  std::optional<FuseBlock> fuse8, fuse16, fuse32;
  std::optional<Decoder> decoder;
  std::optional<nn::Conv2d> squeeze1, squeeze2, squeeze3;  // MULTI_2FILTERS
  std::optional<TemporalCell> cell_rgb, cell_flow;         // EARLY_LSTM
  std::optional<TemporalCell> cell_late;                   // LATE_LSTM
  std::optional<TemporalCell> cell1, cell2, cell3;         // multistage

 private:
  Var decode_frame(const Pyramid& pyr, int in_h, int in_w, bool training, bool first);
  Pyramid encode_frame(Var rgb, Var flow, bool training, bool first);
};

}  // namespace mseg::net

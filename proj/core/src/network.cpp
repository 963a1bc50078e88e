#include "mseg/network.hpp"

#include <algorithm>

#include "mseg/errors.hpp"
#include "mseg/flow_encoding.hpp"

namespace mseg::net {

using namespace ag;

Variant variant_from_string(const std::string& name) {
  for (Variant v : all_variants())
    if (to_string(v) == name) return v;
  throw ArgumentError("unknown variant '" + name +
                      "'; expected one of RGB_ONLY, RGB_FLOW, STACKING, CONV3D, EARLY_LSTM, "
                      "LATE_LSTM, MULTI_LSTM, MULTI_GRU, MULTI_2FILTERS");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::RGB_ONLY: return "RGB_ONLY";
    case Variant::RGB_FLOW: return "RGB_FLOW";
    case Variant::STACKING: return "STACKING";
    case Variant::CONV3D: return "CONV3D";
    case Variant::EARLY_LSTM: return "EARLY_LSTM";
    case Variant::LATE_LSTM: return "LATE_LSTM";
    case Variant::MULTI_LSTM: return "MULTI_LSTM";
    case Variant::MULTI_GRU: return "MULTI_GRU";
    case Variant::MULTI_2FILTERS: return "MULTI_2FILTERS";
  }
  throw ArgumentError("bad variant value");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> all = {
      Variant::RGB_ONLY,  Variant::RGB_FLOW,  Variant::STACKING,
      Variant::CONV3D,    Variant::EARLY_LSTM, Variant::LATE_LSTM,
      Variant::MULTI_LSTM, Variant::MULTI_GRU, Variant::MULTI_2FILTERS};
  return all;
}

bool uses_window(Variant v) {
  return v != Variant::RGB_ONLY && v != Variant::RGB_FLOW;
}

bool is_recurrent(Variant v) {
  switch (v) {
    case Variant::EARLY_LSTM:
    case Variant::LATE_LSTM:
    case Variant::MULTI_LSTM:
    case Variant::MULTI_GRU:
    case Variant::MULTI_2FILTERS: return true;
    default: return false;
  }
}

bool two_stream(Variant v) {
  return v != Variant::RGB_ONLY && v != Variant::STACKING;
}

ModelConfig ModelConfig::desk(Variant v, int T) {
  ModelConfig c;
  c.variant = v;
  c.T = T;
  return c;
}

ModelConfig ModelConfig::tiny(Variant v, int T) {
  ModelConfig c;
  c.variant = v;
  c.T = T;
  c.stem = 6;
  c.stages = {12, 24, 48};
  c.depths = {1, 1, 1};
  c.fuse = {6, 12, 12};
  return c;
}

ModelConfig ModelConfig::full(Variant v, int T) {
  ModelConfig c;
  c.variant = v;
  c.T = T;
  c.stages = {240, 480, 960};
  c.depths = {4, 8, 4};
  c.fuse = {240, 480, 480};
  return c;
}

void ModelConfig::validate() const {
  if (T < 1) throw ArgumentError("T must be at least 1");
  if (uses_window(variant) && T < 2)
    throw ArgumentError(to_string(variant) + " needs T >= 2");
  if (num_classes < 2) throw ArgumentError("num_classes must be at least 2");
  if (groups < 1) throw ArgumentError("groups must be positive");
  if (stem < 1) throw ArgumentError("stem width must be positive");
  if (cell_kernel < 1 || cell_kernel % 2 == 0)
    throw ArgumentError("cell kernel must be odd and positive");
  if (flow_cap <= 0) throw ArgumentError("flow_cap must be positive");
  int cin = stem;
  for (int s = 0; s < 3; ++s) {
    const int cout = stages[s];
    if (cout % 4 != 0) throw ArgumentError("stage width must be divisible by 4");
    const int mid = cout / 4;
    const int path = cout - cin;  // stride-2 unit concatenates the shortcut
    if (path <= 0) throw ArgumentError("stage width must exceed its input width");
    if (mid % groups != 0 || path % groups != 0 || cout % groups != 0)
      throw ArgumentError("groups must divide stage bottleneck and output widths");
    if (fuse[s] < 1) throw ArgumentError("fused widths must be positive");
    cin = cout;
  }
}

ShuffleUnit::ShuffleUnit(nn::ParamStore& store, const std::string& name, int cin, int cout,
                         int stride_, int g_first, int groups, Rng& rng)
    : stride(stride_),
      g1(g_first),
      g2(groups),
      gconv1(store, name + ".g1", cin, cout / 4, 1, 1, 0, g_first, false, rng),
      dwconv(store, name + ".dw", cout / 4, cout / 4, 3, stride_, 1, cout / 4, false, rng),
      gconv2(store, name + ".g2", cout / 4, stride_ == 2 ? cout - cin : cout, 1, 1, 0, groups,
             false, rng),
      bn1(store, name + ".bn1", cout / 4),
      bn2(store, name + ".bn2", cout / 4),
      bn3(store, name + ".bn3", stride_ == 2 ? cout - cin : cout) {}

Var ShuffleUnit::forward(Var x, bool training) {
  Var y = relu(bn1.forward(gconv1.forward(x), training));
  if (g2 > 1) y = channel_shuffle(y, g2);
  y = bn2.forward(dwconv.forward(y), training);
  y = bn3.forward(gconv2.forward(y), training);
  if (stride == 1) return relu(add(x, y));
  Var shortcut = avgpool2d(x, 3, 2, 1);
  return relu(concat_c({shortcut, y}));
}

Stream::Stream(nn::ParamStore& store, const std::string& prefix, int in_channels,
               const ModelConfig& cfg, bool stem_3d, Rng& rng) {
  if (stem_3d)
    stem3d.emplace(store, prefix + ".stem", in_channels, cfg.stem, 3, 3, 1, 2, 1, 1, false, rng);
  else
    stem2d.emplace(store, prefix + ".stem", in_channels, cfg.stem, 3, 2, 1, 1, false, rng);
  stem_bn = nn::BatchNorm2d(store, prefix + ".stem.bn", cfg.stem);
  int cin = cfg.stem;
  for (int s = 0; s < 3; ++s) {
    stage_start[s] = static_cast<int>(units.size());
    for (int u = 0; u < cfg.depths[s]; ++u) {
      const int cout = cfg.stages[s];
      const int stride = u == 0 ? 2 : 1;
      const int g_first = (s == 0 && u == 0) ? 1 : cfg.groups;
      units.emplace_back(store, prefix + ".s" + std::to_string(s) + ".u" + std::to_string(u),
                         cin, cout, stride, g_first, cfg.groups, rng);
      cin = cout;
    }
  }
}

Pyramid Stream::after_stem(Var s2_features, bool training) {
  Pyramid p;
  p.s4 = maxpool2d(s2_features, 3, 2, 1);
  Var cur = p.s4;
  Var* outs[3] = {&p.s8, &p.s16, &p.s32};
  for (int s = 0; s < 3; ++s) {
    const int end = s < 2 ? stage_start[s + 1] : static_cast<int>(units.size());
    for (int i = stage_start[s]; i < end; ++i) cur = units[i].forward(cur, training);
    *outs[s] = cur;
  }
  return p;
}

namespace {

void check_divisible(const Tensor& v) {
  const int h = v.dim(v.rank() - 2), w = v.dim(v.rank() - 1);
  if (h % 8 != 0 || w % 8 != 0)
    throw ArgumentError("input spatial dims must be divisible by 8, got " + v.shape_str());
}

}  // namespace

Pyramid Stream::forward(Var x, bool training) {
  check_divisible(x->value);
  Var y = relu(stem_bn.forward(stem2d->forward(x), training));
  return after_stem(y, training);
}

Pyramid Stream::forward_window(const std::vector<Var>& frames, bool training) {
  for (const Var& f : frames) check_divisible(f->value);
  Var stacked = stack_time(frames);              // (C,T,H,W)
  Var y = temporal_mean(stem3d->forward(stacked));  // (stem,H/2,W/2)
  y = relu(stem_bn.forward(y, training));
  return after_stem(y, training);
}

FuseBlock::FuseBlock(nn::ParamStore& store, const std::string& name, int c_a, int c_b, int c_out,
                     Rng& rng)
    : conv(store, name, c_a + c_b, c_out, 1, 1, 0, 1, true, rng, 1.0) {}

Var FuseBlock::forward(Var a, Var b) {
  if (a->value.dim(1) != b->value.dim(1) || a->value.dim(2) != b->value.dim(2))
    throw ArgumentError("fused streams differ spatially: " + a->value.shape_str() + " vs " +
                        b->value.shape_str());
  return conv.forward(concat_c({a, b}));
}

Decoder::Decoder(nn::ParamStore& store, const std::string& prefix, int c8, int c16, int c32,
                 int num_classes, bool external_score32, Rng& rng)
    : score16(store, prefix + ".score16", c16, num_classes, 1, 1, 0, 1, true, rng, 1.0),
      score8(store, prefix + ".score8", c8, num_classes, 1, 1, 0, 1, true, rng, 1.0),
      up1(store, prefix + ".up1", num_classes, num_classes, 4, 2, 1),
      up2(store, prefix + ".up2", num_classes, num_classes, 4, 2, 1),
      up8(store, prefix + ".up8", num_classes, num_classes, 16, 8, 4) {
  if (!external_score32)
    score32.emplace(store, prefix + ".score32", c32, num_classes, 1, 1, 0, 1, true, rng, 1.0);
}

Var Decoder::score_32(Var f32) { return score32->forward(f32); }
Var Decoder::score_16(Var f16) { return score16.forward(f16); }
Var Decoder::score_8(Var f8) { return score8.forward(f8); }
Var Decoder::up_x2_1(Var x, int out_h, int out_w) { return up1.forward(x, out_h, out_w); }
Var Decoder::up_x2_2(Var x, int out_h, int out_w) { return up2.forward(x, out_h, out_w); }
Var Decoder::up_x8(Var x, int out_h, int out_w) { return up8.forward(x, out_h, out_w); }

TemporalCell::TemporalCell(nn::ParamStore& store, const std::string& name, int channels,
                           int kernel, bool lstm_, Rng& rng)
    : lstm(lstm_) {
  if (lstm)
    lstm_cell.emplace(store, name, channels, kernel, rng);
  else
    gru_cell.emplace(store, name, channels, kernel, rng);
}

void TemporalCell::reset(int h, int w) {
  if (lstm)
    lstm_state = lstm_cell->zero_state(h, w);
  else
    gru_state = gru_cell->zero_state(h, w);
}

Var TemporalCell::step(Var x) {
  Var h;
  if (lstm) {
    lstm_state = lstm_cell->step(x, lstm_state);
    h = lstm_state.h;
  } else {
    gru_state = gru_cell->step(x, gru_state);
    h = gru_state;
  }
  return residual ? add(x, h) : h;
}

Model::Model(const ModelConfig& cfg_, std::uint64_t seed) : cfg(cfg_) {
  cfg.validate();
  Rng rng(seed);
  const int K = cfg.num_classes;
  const bool lstm = cfg.variant != Variant::MULTI_GRU;

  if (cfg.variant == Variant::STACKING) {
    joint_stream.emplace(store, "joint", cfg.T * 6, cfg, false, rng);
  } else {
    rgb_stream.emplace(store, "rgb", 3, cfg, cfg.variant == Variant::CONV3D, rng);
    if (two_stream(cfg.variant))
      flow_stream.emplace(store, "flow", 3, cfg, cfg.variant == Variant::CONV3D, rng);
  }
  if (two_stream(cfg.variant)) {
    fuse8.emplace(store, "fuse8", cfg.stages[0], cfg.stages[0], cfg.fuse[0], rng);
    fuse16.emplace(store, "fuse16", cfg.stages[1], cfg.stages[1], cfg.fuse[1], rng);
    fuse32.emplace(store, "fuse32", cfg.stages[2], cfg.stages[2], cfg.fuse[2], rng);
  }

  const int c8 = two_stream(cfg.variant) ? cfg.fuse[0] : cfg.stages[0];
  const int c16 = two_stream(cfg.variant) ? cfg.fuse[1] : cfg.stages[1];
  const int c32 = two_stream(cfg.variant) ? cfg.fuse[2] : cfg.stages[2];
  const bool squeeze = cfg.variant == Variant::MULTI_2FILTERS;
  decoder.emplace(store, "dec", c8, c16, c32, K, squeeze, rng);

  switch (cfg.variant) {
    case Variant::EARLY_LSTM:
      cell_rgb.emplace(store, "cell_rgb", cfg.stages[2], cfg.cell_kernel, true, rng);
      cell_flow.emplace(store, "cell_flow", cfg.stages[2], cfg.cell_kernel, true, rng);
      break;
    case Variant::LATE_LSTM:
      cell_late.emplace(store, "cell_late", K, cfg.cell_kernel, true, rng);
      break;
    case Variant::MULTI_LSTM:
    case Variant::MULTI_GRU:
      cell1.emplace(store, "cell1", c32, cfg.cell_kernel, lstm, rng);
      cell2.emplace(store, "cell2", K, cfg.cell_kernel, lstm, rng);
      cell3.emplace(store, "cell3", K, cfg.cell_kernel, lstm, rng);
      break;
    case Variant::MULTI_2FILTERS:
      squeeze1.emplace(store, "squeeze1", c32, K, 1, 1, 0, 1, true, rng, 1.0);
      squeeze2.emplace(store, "squeeze2", K, K, 1, 1, 0, 1, true, rng, 1.0);
      squeeze3.emplace(store, "squeeze3", K, K, 1, 1, 0, 1, true, rng, 1.0);
      cell1.emplace(store, "cell1", K, cfg.cell_kernel, true, rng);
      cell2.emplace(store, "cell2", K, cfg.cell_kernel, true, rng);
      cell3.emplace(store, "cell3", K, cfg.cell_kernel, true, rng);
      break;
    default: break;
  }
  for (auto* c : {&cell_rgb, &cell_flow, &cell_late, &cell1, &cell2, &cell3})
    if (c->has_value()) (*c)->residual = cfg.residual_cells;
}

std::int64_t Model::param_count() const { return store.num_params(); }

Pyramid Model::encode_frame(Var rgb, Var flow, bool training, bool first) {
  Pyramid pr = rgb_stream->forward(rgb, training);
  Pyramid pf = flow_stream->forward(flow, training);
  if (cell_rgb) {
    if (first) {
      cell_rgb->reset(pr.s32->value.dim(1), pr.s32->value.dim(2));
      cell_flow->reset(pf.s32->value.dim(1), pf.s32->value.dim(2));
    }
    pr.s32 = cell_rgb->step(pr.s32);
    pf.s32 = cell_flow->step(pf.s32);
  }
  Pyramid fused;
  fused.s8 = fuse8->forward(pr.s8, pf.s8);
  fused.s16 = fuse16->forward(pr.s16, pf.s16);
  fused.s32 = fuse32->forward(pr.s32, pf.s32);
  return fused;
}

Var Model::decode_frame(const Pyramid& pyr, int in_h, int in_w, bool training, bool first) {
  (void)training;
  Var s32map;
  if (squeeze1) {  // squeeze to num_classes, run the cell, no separate score
    Var q = squeeze1->forward(pyr.s32);
    if (first) cell1->reset(q->value.dim(1), q->value.dim(2));
    s32map = cell1->step(q);
  } else if (cell1) {  // cell on the fused features, then score
    if (first) cell1->reset(pyr.s32->value.dim(1), pyr.s32->value.dim(2));
    s32map = decoder->score_32(cell1->step(pyr.s32));
  } else {
    s32map = decoder->score_32(pyr.s32);
  }

  Var x = decoder->up_x2_1(s32map, pyr.s16->value.dim(1), pyr.s16->value.dim(2));
  x = add(x, decoder->score_16(pyr.s16));
  if (cell2) {
    Var q = squeeze2 ? squeeze2->forward(x) : x;
    if (first) cell2->reset(q->value.dim(1), q->value.dim(2));
    x = cell2->step(q);
  }

  x = decoder->up_x2_2(x, pyr.s8->value.dim(1), pyr.s8->value.dim(2));
  x = add(x, decoder->score_8(pyr.s8));
  if (cell3) {
    Var q = squeeze3 ? squeeze3->forward(x) : x;
    if (first) cell3->reset(q->value.dim(1), q->value.dim(2));
    x = cell3->step(q);
  }

  Var logits = decoder->up_x8(x, in_h, in_w);
  if (cell_late) {
    if (first) cell_late->reset(in_h, in_w);
    logits = cell_late->step(logits);
  }
  return logits;
}

ForwardResult Model::forward(const data::SequenceSample& sample, bool training) {
  if (static_cast<int>(sample.frames.size()) != cfg.T ||
      static_cast<int>(sample.flows.size()) != cfg.T)
    throw ArgumentError("sample has " + std::to_string(sample.frames.size()) + " frames, " +
                        to_string(cfg.variant) + " expects T=" + std::to_string(cfg.T));
  std::vector<Tensor> rgb, flow;
  for (int t = 0; t < cfg.T; ++t) {
    rgb.push_back(sample.frames[t].image);
    flow.push_back(mseg::flow::flow_to_colorwheel(sample.flows[t], cfg.flow_cap));
  }
  return forward_encoded(rgb, flow, training);
}

ForwardResult Model::forward_encoded(const std::vector<Tensor>& rgb,
                                     const std::vector<Tensor>& flow, bool training) {
  if (static_cast<int>(rgb.size()) != cfg.T || static_cast<int>(flow.size()) != cfg.T)
    throw ArgumentError("expected T=" + std::to_string(cfg.T) + " frames");
  for (const Tensor& t : rgb)
    if (t.rank() != 3 || t.dim(0) != 3 || !t.same_shape(rgb[0]))
      throw ArgumentError("frames must all be (3,H,W)");
  for (const Tensor& t : flow)
    if (!t.same_shape(rgb[0])) throw ArgumentError("flow maps must match frame dims");
  const int H = rgb[0].dim(1), W = rgb[0].dim(2);

  ForwardResult res;
  switch (cfg.variant) {
    case Variant::RGB_ONLY: {
      Pyramid p = rgb_stream->forward(constant(rgb.back()), training);
      res.logits = decode_frame(p, H, W, training, true);
      return res;
    }
    case Variant::RGB_FLOW: {
      Pyramid p = encode_frame(constant(rgb.back()), constant(flow.back()), training, true);
      res.logits = decode_frame(p, H, W, training, true);
      return res;
    }
    case Variant::STACKING: {
      std::vector<Var> chunks;
      for (const Tensor& t : rgb) chunks.push_back(constant(t));
      for (const Tensor& t : flow) chunks.push_back(constant(t));
      Pyramid p = joint_stream->forward(concat_c(chunks), training);
      res.logits = decode_frame(p, H, W, training, true);
      return res;
    }
    case Variant::CONV3D: {
      std::vector<Var> rv, fv;
      for (const Tensor& t : rgb) rv.push_back(constant(t));
      for (const Tensor& t : flow) fv.push_back(constant(t));
      Pyramid pr = rgb_stream->forward_window(rv, training);
      Pyramid pf = flow_stream->forward_window(fv, training);
      Pyramid fused;
      fused.s8 = fuse8->forward(pr.s8, pf.s8);
      fused.s16 = fuse16->forward(pr.s16, pf.s16);
      fused.s32 = fuse32->forward(pr.s32, pf.s32);
      res.logits = decode_frame(fused, H, W, training, true);
      return res;
    }
    default: {  // recurrent variants unroll over the window
      for (int t = 0; t < cfg.T; ++t) {
        const bool first = t == 0;
        Pyramid p = encode_frame(constant(rgb[t]), constant(flow[t]), training, first);
        res.per_frame.push_back(decode_frame(p, H, W, training, first));
      }
      res.logits = res.per_frame.back();
      return res;
    }
  }
}

}  // namespace mseg::net

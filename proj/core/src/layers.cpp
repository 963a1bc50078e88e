#include "mseg/layers.hpp"

#include <cmath>

#include "mseg/errors.hpp"

namespace mseg::nn {

ag::Var ParamStore::add_param(const std::string& name, Tensor init, bool decay) {
  for (const auto& p : params_)
    if (p.name == name) throw ArgumentError("duplicate parameter name: " + name);
  Param p;
  p.name = name;
  p.var = ag::leaf(std::move(init), true, name);
  p.decay = decay;
  params_.push_back(p);
  return p.var;
}

Tensor* ParamStore::add_buffer(const std::string& name, Tensor init) {
  for (const auto& b : buffers_)
    if (b.name == name) throw ArgumentError("duplicate buffer name: " + name);
  buffers_.push_back(Buffer{name, std::move(init)});
  return &buffers_.back().value;
}

ag::Var ParamStore::find_param(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.var;
  throw NotFoundError("parameter not found: " + name);
}

Tensor* ParamStore::find_buffer(const std::string& name) {
  for (auto& b : buffers_)
    if (b.name == name) return &b.value;
  return nullptr;
}

std::int64_t ParamStore::num_params() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.var->value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) {
    if (p.var->grad_allocated) p.var->grad.fill(0.0);
  }
}

Conv2d::Conv2d(ParamStore& store, const std::string& name, int cin, int cout, int k, int stride_,
               int pad_, int groups_, bool bias, Rng& rng, double gain)
    : stride(stride_), pad(pad_), groups(groups_) {
  const int fan_in = (cin / groups_) * k * k;
  const double stddev = std::sqrt(gain / fan_in);
  weight = store.add_param(name + ".w", Tensor::randn({cout, cin / groups_, k, k}, rng, stddev),
                           true);
  if (bias) bias_v = store.add_param(name + ".b", Tensor::zeros({cout}), false);
}

ag::Var Conv2d::forward(const ag::Var& x) const {
  ag::Var y = ag::conv2d(x, weight, stride, pad, groups);
  if (bias_v) y = ag::add_channel_bias(y, bias_v);
  return y;
}

BatchNorm2d::BatchNorm2d(ParamStore& store, const std::string& name, int channels, double eps_,
                         double momentum_)
    : eps(eps_), momentum(momentum_) {
  gamma = store.add_param(name + ".gamma", Tensor::full({channels}, 1.0), false);
  beta = store.add_param(name + ".beta", Tensor::zeros({channels}), false);
  running_mean = store.add_buffer(name + ".running_mean", Tensor::zeros({channels}));
  running_var = store.add_buffer(name + ".running_var", Tensor::full({channels}, 1.0));
}

ag::Var BatchNorm2d::forward(const ag::Var& x, bool training) const {
  if (!training) return ag::batchnorm_infer(x, gamma, beta, *running_mean, *running_var, eps);
  Tensor bm, bv;
  ag::Var y = ag::batchnorm_train(x, gamma, beta, eps, &bm, &bv);
  for (int c = 0; c < bm.dim(0); ++c) {
    (*running_mean)[c] = (1.0 - momentum) * (*running_mean)[c] + momentum * bm[c];
    (*running_var)[c] = (1.0 - momentum) * (*running_var)[c] + momentum * bv[c];
  }
  return y;
}

namespace {

// Separable bilinear interpolation kernel, the FCN warm start: matching
// in/out channels get the kernel, others start at zero.
Tensor bilinear_weight(int cin, int cout, int k) {
  Tensor w({cin, cout, k, k});
  const double factor = (k + 1) / 2;
  const double center = (k % 2 == 1) ? factor - 1.0 : factor - 0.5;
  for (int ci = 0; ci < cin; ++ci) {
    const int co = ci % cout;
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j)
        w.at4(ci, co, i, j) =
            (1.0 - std::abs(i - center) / factor) * (1.0 - std::abs(j - center) / factor);
  }
  return w;
}

}  // namespace

ConvTranspose2d::ConvTranspose2d(ParamStore& store, const std::string& name, int cin, int cout,
                                 int k, int stride_, int pad_)
    : stride(stride_), pad(pad_) {
  weight = store.add_param(name + ".w", bilinear_weight(cin, cout, k), true);
}

ag::Var ConvTranspose2d::forward(const ag::Var& x, int out_h, int out_w) const {
  return ag::conv_transpose2d(x, weight, stride, pad, out_h, out_w);
}

Conv3d::Conv3d(ParamStore& store, const std::string& name, int cin, int cout, int kt, int k,
               int st_, int s_, int pt_, int p_, bool bias, Rng& rng)
    : st(st_), s(s_), pt(pt_), p(p_) {
  const int fan_in = cin * kt * k * k;
  const double stddev = std::sqrt(2.0 / fan_in);
  weight = store.add_param(name + ".w", Tensor::randn({cout, cin, kt, k, k}, rng, stddev), true);
  if (bias) bias_v = store.add_param(name + ".b", Tensor::zeros({cout}), false);
}

ag::Var Conv3d::forward(const ag::Var& x) const {
  ag::Var y = ag::conv3d(x, weight, st, s, s, pt, p, p);
  if (bias_v) y = ag::add_channel_bias(y, bias_v);
  return y;
}

ConvLSTMCell::ConvLSTMCell(ParamStore& store, const std::string& name, int channels_, int k,
                           Rng& rng)
    : channels(channels_) {
  gates_ = Conv2d(store, name + ".gates", 2 * channels_, 4 * channels_, k, 1, k / 2, 1, true,
                  rng, 1.0);
  // Forget gate opens at init so early training can carry state.
  for (int c = channels_; c < 2 * channels_; ++c) gates_.bias_v->value[c] = 1.0;
}

ConvLSTMCell::State ConvLSTMCell::zero_state(int h, int w) const {
  return State{ag::constant(Tensor::zeros({channels, h, w})),
               ag::constant(Tensor::zeros({channels, h, w}))};
}

ConvLSTMCell::State ConvLSTMCell::step(const ag::Var& x, const State& s) const {
  ag::Var g4 = gates_.forward(ag::concat_c({x, s.h}));
  ag::Var i = ag::sigmoid(ag::slice_c(g4, 0, channels));
  ag::Var f = ag::sigmoid(ag::slice_c(g4, channels, 2 * channels));
  ag::Var g = ag::tanh_op(ag::slice_c(g4, 2 * channels, 3 * channels));
  ag::Var o = ag::sigmoid(ag::slice_c(g4, 3 * channels, 4 * channels));
  ag::Var c2 = ag::add(ag::mul(f, s.c), ag::mul(i, g));
  return State{ag::mul(o, ag::tanh_op(c2)), c2};
}

ConvGRUCell::ConvGRUCell(ParamStore& store, const std::string& name, int channels_, int k,
                         Rng& rng)
    : channels(channels_) {
  zr_ = Conv2d(store, name + ".zr", 2 * channels_, 2 * channels_, k, 1, k / 2, 1, true, rng, 1.0);
  cand_ = Conv2d(store, name + ".cand", 2 * channels_, channels_, k, 1, k / 2, 1, true, rng, 1.0);
}

ag::Var ConvGRUCell::zero_state(int h, int w) const {
  return ag::constant(Tensor::zeros({channels, h, w}));
}

ag::Var ConvGRUCell::step(const ag::Var& x, const ag::Var& h) const {
  ag::Var zr = zr_.forward(ag::concat_c({x, h}));
  ag::Var z = ag::sigmoid(ag::slice_c(zr, 0, channels));
  ag::Var r = ag::sigmoid(ag::slice_c(zr, channels, 2 * channels));
  ag::Var cand = ag::tanh_op(cand_.forward(ag::concat_c({x, ag::mul(r, h)})));
  // (1-z)*h + z*cand, written as h + z*(cand - h).
  return ag::add(h, ag::mul(z, ag::sub(cand, h)));
}

}  // namespace mseg::nn

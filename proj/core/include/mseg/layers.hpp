#pragma once

#include <deque>
#include <string>
#include <vector>

#include "mseg/autograd.hpp"
#include "mseg/conv.hpp"
#include "mseg/rng.hpp"
#include "mseg/tensor.hpp"

namespace mseg::nn {

// A trainable leaf. decay=false exempts it from weight decay (biases and
// normalization affines).
struct Param {
  std::string name;
  ag::Var var;
  bool decay = true;
};

// Non-trainable named state, e.g. batch-norm running statistics.
struct Buffer {
  std::string name;
  Tensor value;
};

// Registration-ordered parameter/buffer registry. Order is the checkpoint
// and optimizer-state order, so construction must be deterministic.
class ParamStore {
public:
  ag::Var add_param(const std::string& name, Tensor init, bool decay);
  // Buffers live in a deque so returned pointers stay valid as more register.
  Tensor* add_buffer(const std::string& name, Tensor init);

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  std::deque<Buffer>& buffers() { return buffers_; }
  const std::deque<Buffer>& buffers() const { return buffers_; }

  ag::Var find_param(const std::string& name) const;  // throws NotFoundError
  Tensor* find_buffer(const std::string& name);
  std::int64_t num_params() const;
  void zero_grad();

private:
  std::vector<Param> params_;
  std::deque<Buffer> buffers_;
};

class Conv2d {
public:
  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, int cin, int cout, int k, int stride,
         int pad, int groups, bool bias, Rng& rng, double gain = 2.0);
  ag::Var forward(const ag::Var& x) const;

  ag::Var weight;
  ag::Var bias_v;  // null when bias-free
  int stride = 1, pad = 0, groups = 1;
};

class BatchNorm2d {
public:
  BatchNorm2d() = default;
  BatchNorm2d(ParamStore& store, const std::string& name, int channels, double eps = 1e-5,
              double momentum = 0.1);
  // Training mode uses this sample's spatial statistics and folds them into
  // the running buffers; inference uses the running buffers.
  ag::Var forward(const ag::Var& x, bool training) const;

  ag::Var gamma, beta;
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  double eps = 1e-5, momentum = 0.1;
};

class ConvTranspose2d {
public:
  ConvTranspose2d() = default;
  // Weight starts as a bilinear interpolation kernel on matching channels,
  // the standard warm start for learned upsampling.
  ConvTranspose2d(ParamStore& store, const std::string& name, int cin, int cout, int k,
                  int stride, int pad);
  ag::Var forward(const ag::Var& x, int out_h, int out_w) const;

  ag::Var weight;
  int stride = 1, pad = 0;
};

class Conv3d {
public:
  Conv3d() = default;
  Conv3d(ParamStore& store, const std::string& name, int cin, int cout, int kt, int k,
         int st, int s, int pt, int p, bool bias, Rng& rng);
  ag::Var forward(const ag::Var& x) const;

  ag::Var weight;
  ag::Var bias_v;
  int st = 1, s = 1, pt = 0, p = 0;
};

// Convolutional LSTM cell, no peepholes. One fused convolution over
// concat(x, h) produces the four gates in order [input, forget, cell, output].
// The forget-gate bias starts at +1.
class ConvLSTMCell {
public:
  struct State {
    ag::Var h, c;
  };

  ConvLSTMCell() = default;
  ConvLSTMCell(ParamStore& store, const std::string& name, int channels, int k, Rng& rng);
  State zero_state(int h, int w) const;
  State step(const ag::Var& x, const State& s) const;

  int channels = 0;

private:
  Conv2d gates_;
};

// Convolutional GRU cell. A fused convolution over concat(x, h) produces
// [update z, reset r]; a second convolution over concat(x, r*h) produces the
// candidate. h' = h + z * (cand - h).
class ConvGRUCell {
public:
  ConvGRUCell() = default;
  ConvGRUCell(ParamStore& store, const std::string& name, int channels, int k, Rng& rng);
  ag::Var zero_state(int h, int w) const;
  ag::Var step(const ag::Var& x, const ag::Var& h) const;

  int channels = 0;

private:
  Conv2d zr_;
  Conv2d cand_;
};

}  // namespace mseg::nn

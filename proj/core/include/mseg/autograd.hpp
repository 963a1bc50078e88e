#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mseg/tensor.hpp"

namespace mseg::ag {

struct Node;
using Var = std::shared_ptr<Node>;

// One value in a reverse-mode tape. Graphs are built per forward pass and
// freed when the last Var goes out of scope. Single-threaded by design.
struct Node {
  Tensor value;
  Tensor grad;
  bool needs_grad = false;
  bool grad_allocated = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;  // pulls this->grad into parents
  std::string name;                     // set for parameter leaves

  Tensor& g() {
    if (!grad_allocated) {
      grad = Tensor(value.shape());
      grad_allocated = true;
    }
    return grad;
  }
};

Var constant(Tensor v);
Var leaf(Tensor v, bool needs_grad = true, std::string name = "");

// Internal helper for defining ops: computes needs_grad from parents and
// prunes the tape below nodes that cannot influence any gradient.
Var make_node(Tensor v, std::vector<Var> parents, std::function<void(Node&)> bp);

// Reverse sweep from a scalar root. Accumulates into leaf .grad members.
void backward(const Var& root);

// ---- elementwise -----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var sigmoid(const Var& a);
Var tanh_op(const Var& a);
Var relu(const Var& a);

// ---- shape / channel ops ----------------------------------------------------
// All feature maps are (C,H,W).
Var concat_c(const std::vector<Var>& xs);
Var slice_c(const Var& x, int c0, int c1);
Var channel_shuffle(const Var& x, int groups);
Var add_channel_bias(const Var& x, const Var& b);
Var spatial_crop(const Var& x, int out_h, int out_w);
// (C,T,H,W) -> (C,H,W), mean over the second axis.
Var temporal_mean(const Var& x);
// T frames of (C,H,W) -> (C,T,H,W).
Var stack_time(const std::vector<Var>& frames);

// ---- reductions (tests and losses) ------------------------------------------
Var sum_all(const Var& x);
Var mean_all(const Var& x);

// ---- batch normalization -----------------------------------------------------
// Training mode normalizes each channel over its spatial extent of the given
// sample; the caller folds batch_mean/batch_var into running statistics.
Var batchnorm_train(const Var& x, const Var& gamma, const Var& beta, double eps,
                    Tensor* batch_mean = nullptr, Tensor* batch_var = nullptr);
Var batchnorm_infer(const Var& x, const Var& gamma, const Var& beta,
                    const Tensor& running_mean, const Tensor& running_var, double eps);

// ---- classification loss -----------------------------------------------------
struct CeLoss {
  Var loss;                       // scalar
  std::int64_t valid_pixels = 0;  // pixels not labeled ignore
  bool all_ignored = false;       // loss defined as 0, caller may warn
};

// Per-pixel weighted softmax cross entropy over logits (K,H,W). labels is
// H*W row-major with values in {0..K-1} or ignore_label.
CeLoss weighted_softmax_ce(const Var& logits, const std::vector<std::uint8_t>& labels,
                           const std::vector<double>& class_weights,
                           std::uint8_t ignore_label = 255);

}  // namespace mseg::ag

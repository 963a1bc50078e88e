#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mseg/datamodel.hpp"
#include "mseg/layers.hpp"
#include "mseg/network.hpp"
#include "mseg/tensor.hpp"

namespace mseg::train {

// Inverse-frequency weights normalized so the frequency-weighted mean is 1:
// w_k = N / (K * n_k). Throws ArgumentError on a zero-count class.
std::vector<double> compute_class_weights(const data::DatasetStats& stats);

// Tiles a conv weight k times along the input-channel axis and divides by k,
// so a k-times stacked copy of the original input reproduces the original
// pre-activation. Works on 2-d (Co,Ci,kh,kw) and 3-d (Co,Ci,kt,kh,kw) kernels.
Tensor replicate_input_filters(const Tensor& w, int k);

// Applies replicate_input_filters to the model's first conv (the stem of its
// first stream); every other parameter is left untouched. The stem's input
// width must equal k times the base kernel's.
void replicate_first_layer(net::Model& model, const Tensor& base_weight, int k);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;  // decoupled; skips params flagged decay=false
};

// Adam with decoupled weight decay over a ParamStore. step() consumes the
// gradients accumulated since the last zero_grad().
class Adam {
 public:
  Adam(nn::ParamStore& store, const AdamConfig& cfg);
  void step();
  std::int64_t steps() const { return t_; }

 private:
  nn::ParamStore* store_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 5e-4;
  int epochs = 200;
  int T = 4;
  int batch_size = 4;
  std::vector<double> class_weights;  // empty: derived from train-set masks
  std::uint64_t seed = 1;
  int checkpoint_every = 0;  // extra periodic checkpoints; 0 = best/last only
  bool per_frame_supervision = false;

  void validate() const;  // throws ArgumentError
};

struct EpochRow {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_miou = 0.0;
  double val_moving_iou = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochRow& r);

struct TrainResult {
  std::vector<EpochRow> log;
  std::string best_checkpoint;
  std::string last_checkpoint;
  int best_epoch = 0;
  double best_miou = 0.0;
  std::vector<double> class_weights_used;
  bool diverged = false;
  std::string diagnostic_checkpoint;  // set when diverged
};

// Full loop: per-epoch pass over all T-windows of train_root in a seeded
// shuffle, one optimizer step per batch of gradient-averaged windows, loss on
// the last frame of each window, end-of-epoch validation on val_root. Writes
// metrics.csv plus best/last checkpoints under out_dir. A non-finite loss
// aborts immediately after writing a diagnostic checkpoint.
TrainResult train(net::Model& model, const std::string& train_root,
                  const std::string& val_root, const TrainConfig& cfg,
                  const std::string& out_dir);

}  // namespace mseg::train

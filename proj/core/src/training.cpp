#include "mseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mseg/autograd.hpp"
#include "mseg/checkpoint.hpp"
#include "mseg/errors.hpp"
#include "mseg/evaluation.hpp"
#include "mseg/rng.hpp"

namespace mseg::train {
namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

struct Window {
  std::string sequence;
  int end = 0;
};

std::vector<Window> index_windows(const std::string& root, int t) {
  std::vector<Window> out;
  for (const auto& seq : data::list_sequences(root)) {
    const int len = data::sequence_length(root, seq);
    for (int end = t - 1; end < len; ++end) out.push_back({seq, end});
  }
  if (out.empty())
    throw InsufficientDataError("no " + std::to_string(t) + "-frame windows under " + root);
  return out;
}

std::vector<double> derive_class_weights(const std::string& root,
                                         const std::vector<Window>& windows, int num_classes) {
  data::DatasetStats stats;
  stats.pixel_count_per_class.assign(static_cast<std::size_t>(num_classes), 0);
  for (const auto& w : windows) {
    const data::MotionMask m = data::load_mask(data::mask_path(root, w.sequence, w.end));
    for (const auto l : m.labels)
      if (l != 255 && l < num_classes) stats.pixel_count_per_class[l]++;
    stats.num_samples++;
  }
  return compute_class_weights(stats);
}

ag::Var sample_loss(net::Model& model, const data::SequenceSample& sample,
                    const TrainConfig& cfg, const std::vector<double>& weights) {
  auto res = model.forward(sample, true);
  if (cfg.per_frame_supervision && !res.per_frame.empty() &&
      sample.frame_targets.size() == res.per_frame.size()) {
    ag::Var total;
    for (std::size_t t = 0; t < res.per_frame.size(); ++t) {
      auto ce = ag::weighted_softmax_ce(res.per_frame[t], sample.frame_targets[t].labels,
                                        weights);
      total = total ? ag::add(total, ce.loss) : ce.loss;
    }
    return ag::scale(total, 1.0 / static_cast<double>(res.per_frame.size()));
  }
  return ag::weighted_softmax_ce(res.logits, sample.target.labels, weights).loss;
}

}  // namespace

std::vector<double> compute_class_weights(const data::DatasetStats& stats) {
  const auto& counts = stats.pixel_count_per_class;
  if (counts.empty()) throw ArgumentError("empty class counts");
  std::int64_t total = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] < 0) throw ArgumentError("negative class count");
    if (counts[k] == 0)
      throw ArgumentError("class " + std::to_string(k) +
                          " has zero pixels; pass explicit class weights or enable "
                          "count smoothing");
    total += counts[k];
  }
  std::vector<double> w(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k)
    w[k] = static_cast<double>(total) /
           (static_cast<double>(counts.size()) * static_cast<double>(counts[k]));
  return w;
}

Tensor replicate_input_filters(const Tensor& w, int k) {
  if (k < 1) throw ArgumentError("replication factor must be >= 1, got " + std::to_string(k));
  if (w.rank() != 4 && w.rank() != 5)
    throw ArgumentError("expected a conv kernel of rank 4 or 5, got rank " +
                        std::to_string(w.rank()));
  const int cout = w.dim(0), cin = w.dim(1);
  std::vector<int> shape = w.shape();
  shape[1] = cin * k;
  Tensor out(shape);
  std::int64_t tail = 1;
  for (int d = 2; d < w.rank(); ++d) tail *= w.dim(d);
  const double inv = 1.0 / static_cast<double>(k);
  for (int o = 0; o < cout; ++o)
    for (int r = 0; r < k; ++r)
      for (int c = 0; c < cin; ++c)
        for (std::int64_t i = 0; i < tail; ++i)
          out[(static_cast<std::int64_t>(o) * cin * k + r * cin + c) * tail + i] =
              w[(static_cast<std::int64_t>(o) * cin + c) * tail + i] * inv;
  return out;
}

void replicate_first_layer(net::Model& model, const Tensor& base_weight, int k) {
  auto& params = model.store.params();
  if (params.empty()) throw ArgumentError("model has no parameters");
  nn::Param& stem = params.front();
  if (stem.name.find(".stem.w") == std::string::npos)
    throw ArgumentError("first registered parameter is not a stem kernel: " + stem.name);
  const Tensor tiled = replicate_input_filters(base_weight, k);
  if (tiled.shape() != stem.var->value.shape())
    throw ArgumentError("replicated kernel " + tiled.shape_str() + " does not fit stem " +
                        stem.var->value.shape_str());
  stem.var->value = tiled;
}

Adam::Adam(nn::ParamStore& store, const AdamConfig& cfg) : store_(&store), cfg_(cfg) {
  if (cfg.lr < 0 || cfg.beta1 < 0 || cfg.beta1 >= 1 || cfg.beta2 < 0 || cfg.beta2 >= 1 ||
      cfg.eps <= 0 || cfg.weight_decay < 0)
    throw ArgumentError("bad optimizer settings");
  for (auto& p : store.params()) {
    m_.emplace_back(p.var->value.shape());
    v_.emplace_back(p.var->value.shape());
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto& params = store_->params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    Tensor& value = p.var->value;
    const bool has_grad = p.var->grad_allocated;
    for (std::int64_t j = 0; j < value.size(); ++j) {
      const double g = has_grad ? p.var->grad[j] : 0.0;
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      value[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      if (p.decay) value[j] -= cfg_.lr * cfg_.weight_decay * value[j];
    }
  }
}

void TrainConfig::validate() const {
  if (learning_rate < 0) throw ArgumentError("learning_rate must be >= 0");
  if (weight_decay < 0) throw ArgumentError("weight_decay must be >= 0");
  if (epochs < 1) throw ArgumentError("epochs must be >= 1");
  if (T < 1) throw ArgumentError("T must be >= 1");
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (checkpoint_every < 0) throw ArgumentError("checkpoint_every must be >= 0");
  for (double w : class_weights)
    if (!(w >= 0)) throw ArgumentError("class weights must be >= 0");
}

std::string metrics_csv_header() { return "epoch,loss,miou,moving_iou"; }

std::string metrics_csv_row(const EpochRow& r) {
  return std::to_string(r.epoch) + "," + fmt(r.train_loss) + "," + fmt(r.val_miou) + "," +
         fmt(r.val_moving_iou);
}

TrainResult train(net::Model& model, const std::string& train_root,
                  const std::string& val_root, const TrainConfig& cfg,
                  const std::string& out_dir) {
  cfg.validate();
  if (cfg.T != model.cfg.T)
    throw ArgumentError("config window T=" + std::to_string(cfg.T) + " but model expects T=" +
                        std::to_string(model.cfg.T));
  if (!cfg.class_weights.empty() &&
      static_cast<int>(cfg.class_weights.size()) != model.cfg.num_classes)
    throw ArgumentError("need one class weight per class");

  std::filesystem::create_directories(out_dir);
  const auto windows = index_windows(train_root, cfg.T);

  TrainResult result;
  result.class_weights_used =
      cfg.class_weights.empty()
          ? derive_class_weights(train_root, windows, model.cfg.num_classes)
          : cfg.class_weights;

  std::ofstream metrics(out_dir + "/metrics.csv", std::ios::trunc);
  if (!metrics) throw IoError("cannot write " + out_dir + "/metrics.csv");
  metrics << metrics_csv_header() << "\n";

  Adam adam(model.store, {cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  std::vector<std::size_t> order(windows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const std::string best_path = out_dir + "/best.ckpt";
  const std::string last_path = out_dir + "/last.ckpt";

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(cfg.seed * 1000003ull + static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[static_cast<std::size_t>(
                    shuffle_rng.uniform_int(0, static_cast<int>(i) - 1))]);

    double loss_sum = 0.0;
    std::size_t done = 0;
    while (done < order.size()) {
      const std::size_t batch = std::min<std::size_t>(cfg.batch_size, order.size() - done);
      model.store.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const Window& w = windows[order[done + b]];
        const auto sample = data::load_sequence(train_root, w.sequence, w.end, cfg.T);
        ag::Var loss = sample_loss(model, sample, cfg, result.class_weights_used);
        batch_loss += loss->value[0];
        ag::backward(ag::scale(loss, 1.0 / static_cast<double>(batch)));
      }
      done += batch;
      loss_sum += batch_loss;
      if (!std::isfinite(batch_loss)) {
        result.diverged = true;
        result.diagnostic_checkpoint = out_dir + "/diverged.ckpt";
        ckpt::save(result.diagnostic_checkpoint, model,
                   {{"epoch", std::to_string(epoch)}, {"status", "diverged"}});
        return result;
      }
      adam.step();
    }

    EpochRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(windows.size());
    const auto report = eval::evaluate(model, val_root);
    row.val_miou = report.miou;
    row.val_moving_iou = report.moving_iou;
    result.log.push_back(row);
    metrics << metrics_csv_row(row) << "\n";
    metrics.flush();

    const ckpt::Extras extras{{"epoch", std::to_string(epoch)},
                              {"train_loss", fmt(row.train_loss)},
                              {"val_miou", fmt(row.val_miou)}};
    if (result.log.size() == 1 || row.val_miou > result.best_miou) {
      result.best_miou = row.val_miou;
      result.best_epoch = epoch;
      ckpt::save(best_path, model, extras);
      result.best_checkpoint = best_path;
    }
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
      ckpt::save(out_dir + "/epoch_" + std::to_string(epoch) + ".ckpt", model, extras);
    ckpt::save(last_path, model, extras);
    result.last_checkpoint = last_path;
  }
  return result;
}

}  // namespace mseg::train

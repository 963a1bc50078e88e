#include "mseg/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <sstream>

#include "mseg/errors.hpp"
#include "mseg/rng.hpp"

namespace mseg::eval {
namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

Confusion::Confusion(int num_classes_)
    : num_classes(num_classes_),
      counts(static_cast<std::size_t>(num_classes_) * num_classes_, 0) {
  if (num_classes_ < 2) throw ArgumentError("confusion needs at least 2 classes");
}

void Confusion::add(const data::MotionMask& pred, const data::MotionMask& target) {
  if (pred.h != target.h || pred.w != target.w)
    throw ArgumentError("pred/target size mismatch: " + std::to_string(pred.h) + "x" +
                        std::to_string(pred.w) + " vs " + std::to_string(target.h) + "x" +
                        std::to_string(target.w));
  const std::size_t n = pred.labels.size();
  for (std::size_t i = 0; i < n; ++i) {
    const int t = target.labels[i];
    const int p = pred.labels[i];
    if (t == 255 || p == 255) continue;
    if (t >= num_classes || p >= num_classes)
      throw ArgumentError("label " + std::to_string(std::max(t, p)) + " out of range for " +
                          std::to_string(num_classes) + " classes");
    counts[static_cast<std::size_t>(t) * num_classes + p]++;
  }
}

void Confusion::merge(const Confusion& other) {
  if (other.num_classes != num_classes) throw ArgumentError("confusion class-count mismatch");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

std::int64_t Confusion::total() const {
  std::int64_t s = 0;
  for (auto c : counts) s += c;
  return s;
}

IouResult iou_from_confusion(const Confusion& c) {
  const int k = c.num_classes;
  IouResult r;
  r.valid_pixels = c.total();
  if (r.valid_pixels == 0) throw InsufficientDataError("no valid pixels to score");
  r.iou_per_class.assign(static_cast<std::size_t>(k),
                         std::numeric_limits<double>::quiet_NaN());
  r.class_present.assign(static_cast<std::size_t>(k), false);
  double sum = 0.0;
  int present = 0;
  for (int i = 0; i < k; ++i) {
    const std::int64_t tp = c.counts[static_cast<std::size_t>(i) * k + i];
    std::int64_t fp = 0, fn = 0;
    for (int j = 0; j < k; ++j) {
      if (j == i) continue;
      fp += c.counts[static_cast<std::size_t>(j) * k + i];
      fn += c.counts[static_cast<std::size_t>(i) * k + j];
    }
    const std::int64_t denom = tp + fp + fn;
    if (denom == 0) continue;  // class absent from both pred and target
    r.class_present[static_cast<std::size_t>(i)] = true;
    r.iou_per_class[static_cast<std::size_t>(i)] =
        static_cast<double>(tp) / static_cast<double>(denom);
    sum += r.iou_per_class[static_cast<std::size_t>(i)];
    ++present;
  }
  r.miou = sum / present;
  return r;
}

IouResult iou(const std::vector<data::MotionMask>& preds,
              const std::vector<data::MotionMask>& targets, int num_classes) {
  if (preds.size() != targets.size())
    throw ArgumentError("iou: " + std::to_string(preds.size()) + " predictions vs " +
                        std::to_string(targets.size()) + " targets");
  Confusion c(num_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) c.add(preds[i], targets[i]);
  return iou_from_confusion(c);
}

data::MotionMask argmax_mask(const Tensor& logits) {
  if (logits.rank() != 3) throw ArgumentError("logits must be (K,H,W)");
  const int k = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  data::MotionMask m(h, w);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (std::int64_t i = 0; i < plane; ++i) {
    int best = 0;
    double best_v = logits[i];
    for (int c = 1; c < k; ++c) {
      const double v = logits[c * plane + i];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    m.labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
  }
  return m;
}

double temporal_stability(const std::vector<data::MotionMask>& preds,
                          const std::vector<flow::FlowField>& flows) {
  if (preds.size() < 2)
    throw InsufficientDataError("temporal stability needs at least 2 predictions");
  if (flows.size() != preds.size() - 1)
    throw ArgumentError("need one flow per consecutive prediction pair: got " +
                        std::to_string(flows.size()) + " for " + std::to_string(preds.size()) +
                        " predictions");
  double sum = 0.0;
  for (std::size_t t = 1; t < preds.size(); ++t) {
    const data::MotionMask& cur = preds[t];
    const data::MotionMask& prev = preds[t - 1];
    const flow::FlowField& f = flows[t - 1];
    if (prev.h != cur.h || prev.w != cur.w || f.h != cur.h || f.w != cur.w)
      throw ArgumentError("prediction/flow size mismatch at pair " + std::to_string(t));
    std::int64_t inter = 0, uni = 0;
    for (int y = 0; y < cur.h; ++y) {
      for (int x = 0; x < cur.w; ++x) {
        const long sx = std::lround(x - f.u(y, x));
        const long sy = std::lround(y - f.v(y, x));
        if (sx < 0 || sx >= cur.w || sy < 0 || sy >= cur.h) continue;
        const std::uint8_t a = cur.at(y, x);
        const std::uint8_t b = prev.at(static_cast<int>(sy), static_cast<int>(sx));
        if (a == 255 || b == 255) continue;
        inter += (a == 1 && b == 1);
        uni += (a == 1 || b == 1);
      }
    }
    sum += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return sum / static_cast<double>(preds.size() - 1);
}

std::string report_csv_header() {
  return "iou_class0,iou_class1,miou,moving_iou,temporal_stability,fps,num_eval_pixels";
}

std::string report_csv_row(const EvalReport& r) {
  const double c0 = r.iou_per_class.size() > 0 ? r.iou_per_class[0] : 0.0;
  const double c1 = r.iou_per_class.size() > 1 ? r.iou_per_class[1] : 0.0;
  return fmt(c0) + "," + fmt(c1) + "," + fmt(r.miou) + "," + fmt(r.moving_iou) + "," +
         fmt(r.stability) + "," + fmt(r.fps) + "," + std::to_string(r.num_eval_pixels);
}

std::string report_table(const EvalReport& r) {
  std::ostringstream os;
  os << "class IoU:";
  for (std::size_t i = 0; i < r.iou_per_class.size(); ++i)
    os << " [" << i << "] " << fmt(r.iou_per_class[i]);
  os << "\nmIoU:           " << fmt(r.miou);
  os << "\nmoving IoU:     " << fmt(r.moving_iou);
  os << "\nstability:      " << fmt(r.stability)
     << (r.stability_exact_flow ? " (exact flow)" : " (observed flow)");
  if (r.fps > 0) os << "\nfps:            " << fmt(r.fps);
  os << "\neval pixels:    " << r.num_eval_pixels << "\n";
  return os.str();
}

EvalReport evaluate(net::Model& model, const std::string& root, const EvalOptions& opt) {
  const int t_window = model.cfg.T;
  const auto sequences = data::list_sequences(root);
  if (sequences.empty()) throw NotFoundError("no sequences under " + root);

  Confusion conf(model.cfg.num_classes);
  double stab_sum = 0.0;
  std::int64_t stab_pairs = 0;
  bool used_exact = true;

  for (const auto& seq : sequences) {
    const int len = data::sequence_length(root, seq);
    if (len < t_window) continue;
    std::vector<data::MotionMask> seq_preds;
    std::vector<flow::FlowField> seq_flows;
    for (int end = t_window - 1; end < len; ++end) {
      data::SequenceSample sample = data::load_sequence(root, seq, end, t_window);
      auto res = model.forward(sample, false);
      data::MotionMask pred = argmax_mask(res.logits->value);
      conf.add(pred, sample.target);
      if (!seq_preds.empty()) {
        const std::string exact = data::flow_gt_path(root, seq, end);
        if (opt.prefer_exact_flow && std::filesystem::exists(exact)) {
          seq_flows.push_back(flow::read_flo(exact));
        } else {
          seq_flows.push_back(flow::read_flo(data::flow_path(root, seq, end)));
          used_exact = false;
        }
      }
      seq_preds.push_back(std::move(pred));
    }
    if (seq_preds.size() >= 2) {
      const auto pairs = static_cast<std::int64_t>(seq_preds.size() - 1);
      stab_sum += temporal_stability(seq_preds, seq_flows) * static_cast<double>(pairs);
      stab_pairs += pairs;
    }
  }

  EvalReport r;
  const IouResult ir = iou_from_confusion(conf);
  r.iou_per_class = ir.iou_per_class;
  r.miou = ir.miou;
  r.moving_iou = ir.iou_per_class.size() > 1 ? ir.iou_per_class[1] : 0.0;
  r.num_eval_pixels = ir.valid_pixels;
  if (stab_pairs > 0) {
    r.stability = stab_sum / static_cast<double>(stab_pairs);
    r.stability_exact_flow = used_exact;
  }
  return r;
}

BenchResult benchmark_fps(net::Model& model, int h, int w, int warmup, int iters,
                          std::uint64_t seed) {
  if (iters < 10) throw ArgumentError("benchmark needs at least 10 iterations");
  if (warmup < 0) throw ArgumentError("negative warmup");
  Rng rng(seed);
  std::vector<Tensor> rgb, flow;
  for (int t = 0; t < model.cfg.T; ++t) {
    rgb.push_back(Tensor::randn({3, h, w}, rng, 0.3));
    flow.push_back(Tensor::randn({3, h, w}, rng, 0.3));
  }
  for (int i = 0; i < warmup; ++i) (void)model.forward_encoded(rgb, flow, false);

  BenchResult r;
  r.iters = iters;
  r.samples_s.reserve(static_cast<std::size_t>(iters));
  for (int i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)model.forward_encoded(rgb, flow, false);
    const auto t1 = std::chrono::steady_clock::now();
    r.samples_s.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::vector<double> sorted = r.samples_s;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  r.median_s = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  const auto p95_idx = static_cast<std::size_t>(
      std::ceil(0.95 * static_cast<double>(n))) - 1;
  r.p95_s = sorted[std::min(p95_idx, n - 1)];
  r.fps = 1.0 / r.median_s;
  return r;
}

std::string bench_csv_header() { return "variant,T,h,w,iters,median_ms,p95_ms,fps"; }

std::string bench_csv_row(const std::string& variant, int t, int h, int w,
                          const BenchResult& r) {
  return variant + "," + std::to_string(t) + "," + std::to_string(h) + "," +
         std::to_string(w) + "," + std::to_string(r.iters) + "," + fmt(r.median_s * 1e3) +
         "," + fmt(r.p95_s * 1e3) + "," + fmt(r.fps);
}

}  // namespace mseg::eval

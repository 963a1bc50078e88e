#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mseg/datamodel.hpp"
#include "mseg/flowio.hpp"
#include "mseg/network.hpp"

namespace mseg::eval {

// Dataset-level confusion matrix, additive over shards. counts is K x K
// row-major, indexed [target * K + pred]; pixels with ignore label 255 on
// either side are excluded.
struct Confusion {
  explicit Confusion(int num_classes = 2);
  void add(const data::MotionMask& pred, const data::MotionMask& target);
  void merge(const Confusion& other);

  int num_classes;
  std::vector<std::int64_t> counts;
  std::int64_t total() const;
};

struct IouResult {
  std::vector<double> iou_per_class;  // NaN for classes absent from both sides
  std::vector<bool> class_present;
  double miou = 0.0;  // mean over present classes
  std::int64_t valid_pixels = 0;
};

// Throws InsufficientDataError when no valid pixels were accumulated.
IouResult iou_from_confusion(const Confusion& c);
IouResult iou(const std::vector<data::MotionMask>& preds,
              const std::vector<data::MotionMask>& targets, int num_classes);

// Per-pixel argmax over (K,H,W) logits; ties resolve to the lower class.
data::MotionMask argmax_mask(const Tensor& logits);

// Mean over consecutive prediction pairs of IoU(pred_t, warp(pred_{t-1})),
// warping by nearest-neighbor displacement with flows[t-1], which maps frame
// t-1 content onto frame t's grid. Pixels whose source falls outside the
// image and pixels labeled 255 on either side are excluded; an empty union
// counts as 1.0 (two empty masks are perfectly consistent).
double temporal_stability(const std::vector<data::MotionMask>& preds,
                          const std::vector<flow::FlowField>& flows);

struct EvalReport {
  std::vector<double> iou_per_class;
  double miou = 0.0;
  double moving_iou = 0.0;  // iou_per_class[1]
  double stability = -1.0;  // -1 when fewer than two consecutive predictions
  bool stability_exact_flow = false;
  double fps = 0.0;  // filled by benchmarking, not by evaluate()
  std::int64_t num_eval_pixels = 0;
};

std::string report_csv_header();
std::string report_csv_row(const EvalReport& r);
std::string report_table(const EvalReport& r);

struct EvalOptions {
  // Warp with flow_gt/ when present (exact synthetic flow), else with the
  // observed flow/ fields.
  bool prefer_exact_flow = true;
};

// Slides a T-window over every sequence under root, predicting the last frame
// of each window with recurrent state reset per window, and folds one global
// confusion matrix plus the pairwise stability mean.
EvalReport evaluate(net::Model& model, const std::string& root, const EvalOptions& opt = {});

struct BenchResult {
  double median_s = 0.0;
  double p95_s = 0.0;
  double fps = 0.0;
  int iters = 0;
  std::vector<double> samples_s;
};

// Times eval-mode forward passes of one T-window of pinned random inputs.
// Warmup iterations are discarded. iters must be at least 10.
BenchResult benchmark_fps(net::Model& model, int h, int w, int warmup, int iters,
                          std::uint64_t seed = 1234);

std::string bench_csv_header();
std::string bench_csv_row(const std::string& variant, int t, int h, int w,
                          const BenchResult& r);

}  // namespace mseg::eval

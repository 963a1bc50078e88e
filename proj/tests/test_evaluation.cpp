#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <doctest.h>

#include "mseg/datamodel.hpp"
#include "mseg/errors.hpp"
#include "mseg/evaluation.hpp"
#include "mseg/flowio.hpp"
#include "mseg/image.hpp"
#include "mseg/network.hpp"
#include "mseg/rng.hpp"
#include "support/tmpdir.hpp"

using namespace mseg;
using data::MotionMask;
using test::TmpDir;

namespace fs = std::filesystem;

namespace {

MotionMask random_mask(int h, int w, Rng& rng, double p_ignore = 0.0) {
  MotionMask m(h, w);
  for (auto& l : m.labels) {
    const double u = rng.uniform();
    l = u < p_ignore ? 255 : (rng.uniform() < 0.5 ? 0 : 1);
  }
  return m;
}

// Independent scorer: per class, raw TP/FP/FN triple counting over pixels.
struct BruteIou {
  std::vector<double> per_class;
  std::vector<bool> present;
  double miou;
};

BruteIou brute_iou(const std::vector<MotionMask>& preds, const std::vector<MotionMask>& targets,
                   int k) {
  BruteIou r;
  r.per_class.assign(static_cast<std::size_t>(k), std::nan(""));
  r.present.assign(static_cast<std::size_t>(k), false);
  double sum = 0.0;
  int n_present = 0;
  for (int c = 0; c < k; ++c) {
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
      for (std::size_t j = 0; j < preds[i].labels.size(); ++j) {
        const int p = preds[i].labels[j];
        const int t = targets[i].labels[j];
        if (p == 255 || t == 255) continue;
        if (p == c && t == c) ++tp;
        if (p == c && t != c) ++fp;
        if (p != c && t == c) ++fn;
      }
    if (tp + fp + fn == 0) continue;
    r.present[static_cast<std::size_t>(c)] = true;
    r.per_class[static_cast<std::size_t>(c)] =
        static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    sum += r.per_class[static_cast<std::size_t>(c)];
    ++n_present;
  }
  r.miou = sum / n_present;
  return r;
}

// Independent stability scorer: materialize the warped previous mask, then
// count. 254 marks out-of-image or excluded pixels.
double brute_stability(const std::vector<MotionMask>& preds,
                       const std::vector<flow::FlowField>& flows) {
  double sum = 0.0;
  for (std::size_t t = 1; t < preds.size(); ++t) {
    const auto& f = flows[t - 1];
    MotionMask warped(preds[t].h, preds[t].w);
    for (int y = 0; y < warped.h; ++y)
      for (int x = 0; x < warped.w; ++x) {
        const long sx = std::lround(x - f.u(y, x));
        const long sy = std::lround(y - f.v(y, x));
        warped.at(y, x) = (sx < 0 || sx >= warped.w || sy < 0 || sy >= warped.h)
                              ? 254
                              : preds[t - 1].at(static_cast<int>(sy), static_cast<int>(sx));
      }
    std::int64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < warped.labels.size(); ++i) {
      const int a = preds[t].labels[i];
      const int b = warped.labels[i];
      if (a >= 254 || b >= 254) continue;
      inter += (a == 1 && b == 1);
      uni += (a == 1 || b == 1);
    }
    sum += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return sum / static_cast<double>(preds.size() - 1);
}

}  // namespace

TEST_CASE("iou closed forms") {
  Rng rng(70);
  MotionMask m = random_mask(6, 7, rng);
  auto r = eval::iou({m}, {m}, 2);
  CHECK(r.miou == 1.0);
  for (int c = 0; c < 2; ++c)
    if (r.class_present[static_cast<std::size_t>(c)])
      CHECK(r.iou_per_class[static_cast<std::size_t>(c)] == 1.0);

  // Complement predictions on a 2x2 mask with both classes present.
  MotionMask t(2, 2), p(2, 2);
  t.labels = {0, 0, 1, 1};
  p.labels = {1, 1, 0, 0};
  r = eval::iou({p}, {t}, 2);
  CHECK(r.iou_per_class[0] == 0.0);
  CHECK(r.iou_per_class[1] == 0.0);
  CHECK(r.miou == 0.0);
  CHECK(r.valid_pixels == 4);

  // A class absent from both sides is excluded from the mean.
  MotionMask z(3, 3);
  auto rz = eval::iou({z}, {z}, 2);
  CHECK(rz.class_present[0]);
  CHECK_FALSE(rz.class_present[1]);
  CHECK(rz.miou == 1.0);
  CHECK(std::isnan(rz.iou_per_class[1]));

  MotionMask ign(2, 2);
  ign.labels = {255, 255, 255, 255};
  CHECK_THROWS_AS(eval::iou({ign}, {ign}, 2), InsufficientDataError);

  MotionMask small(2, 3);
  CHECK_THROWS_AS(eval::iou({small}, {z}, 2), ArgumentError);
  MotionMask bad(2, 2);
  bad.labels = {0, 1, 2, 0};
  CHECK_THROWS_AS(eval::iou({bad}, {MotionMask(2, 2)}, 2), ArgumentError);
}

TEST_CASE("iou matches brute-force counting on 200 random cases") {
  Rng rng(71);
  for (int trial = 0; trial < 200; ++trial) {
    const int h = rng.uniform_int(1, 16), w = rng.uniform_int(1, 16);
    const int n = rng.uniform_int(1, 3);
    const double p_ign = trial % 3 == 0 ? 0.15 : 0.0;
    std::vector<MotionMask> preds, targets;
    for (int i = 0; i < n; ++i) {
      preds.push_back(random_mask(h, w, rng, p_ign));
      targets.push_back(random_mask(h, w, rng, p_ign));
    }
    bool any_valid = false;
    for (int i = 0; i < n && !any_valid; ++i)
      for (std::size_t j = 0; j < preds[i].labels.size(); ++j)
        if (preds[i].labels[j] != 255 && targets[i].labels[j] != 255) {
          any_valid = true;
          break;
        }
    if (!any_valid) continue;

    const auto got = eval::iou(preds, targets, 2);
    const auto want = brute_iou(preds, targets, 2);
    CHECK(got.miou == want.miou);  // identical integer counts, exact division
    for (int c = 0; c < 2; ++c) {
      CHECK(got.class_present[static_cast<std::size_t>(c)] ==
            want.present[static_cast<std::size_t>(c)]);
      if (want.present[static_cast<std::size_t>(c)])
        CHECK(got.iou_per_class[static_cast<std::size_t>(c)] ==
              want.per_class[static_cast<std::size_t>(c)]);
    }
  }
}

TEST_CASE("confusion is additive over shards and pixel-order invariant") {
  Rng rng(72);
  std::vector<MotionMask> preds, targets;
  for (int i = 0; i < 6; ++i) {
    preds.push_back(random_mask(9, 11, rng, 0.1));
    targets.push_back(random_mask(9, 11, rng, 0.1));
  }
  eval::Confusion whole(2);
  for (int i = 0; i < 6; ++i) whole.add(preds[i], targets[i]);

  eval::Confusion a(2), b(2);
  for (int i = 0; i < 3; ++i) a.add(preds[i], targets[i]);
  for (int i = 3; i < 6; ++i) b.add(preds[i], targets[i]);
  a.merge(b);
  CHECK(a.counts == whole.counts);

  // Permuting pixels identically in pred and target leaves the result fixed.
  MotionMask p = preds[0], t = targets[0];
  std::vector<int> order(p.labels.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(
                                rng.uniform_int(0, static_cast<int>(i) - 1))]);
  MotionMask ps(p.h, p.w), ts(p.h, p.w);
  for (std::size_t i = 0; i < order.size(); ++i) {
    ps.labels[i] = p.labels[static_cast<std::size_t>(order[i])];
    ts.labels[i] = t.labels[static_cast<std::size_t>(order[i])];
  }
  const auto r0 = eval::iou({p}, {t}, 2);
  const auto r1 = eval::iou({ps}, {ts}, 2);
  CHECK(r0.miou == r1.miou);
}

TEST_CASE("argmax mask picks the winning channel, low index on ties") {
  Tensor logits({2, 2, 2});
  // channel 0 plane then channel 1 plane
  logits.vec() = {0.5, -1.0, 2.0, 0.0, 0.4, 3.0, 2.0, 0.0};
  const auto m = eval::argmax_mask(logits);
  CHECK(m.at(0, 0) == 0);  // 0.5 > 0.4
  CHECK(m.at(0, 1) == 1);  // -1 < 3
  CHECK(m.at(1, 0) == 0);  // tie -> class 0
  CHECK(m.at(1, 1) == 0);  // tie -> class 0
  CHECK_THROWS_AS(eval::argmax_mask(Tensor({2, 2})), ArgumentError);
}

TEST_CASE("temporal stability closed forms") {
  const int h = 8, w = 8;
  MotionMask a(h, w);
  for (int y = 2; y < 5; ++y)
    for (int x = 3; x < 6; ++x) a.at(y, x) = 1;
  std::vector<flow::FlowField> zero{flow::FlowField(h, w)};
  CHECK(eval::temporal_stability({a, a}, zero) == 1.0);

  // All-empty predictions are perfectly consistent by convention.
  MotionMask empty(h, w);
  CHECK(eval::temporal_stability({empty, empty}, zero) == 1.0);

  MotionMask ones(h, w);
  for (auto& l : ones.labels) l = 1;
  CHECK(eval::temporal_stability({empty, ones, empty}, {flow::FlowField(h, w),
                                                        flow::FlowField(h, w)}) == 0.0);

  CHECK_THROWS_AS(eval::temporal_stability({a}, {}), InsufficientDataError);
  CHECK_THROWS_AS(eval::temporal_stability({a, a}, {}), ArgumentError);
  CHECK_THROWS_AS(eval::temporal_stability({a, a}, {flow::FlowField(h, w + 1)}),
                  ArgumentError);
}

TEST_CASE("temporal stability is exact under rigid translation") {
  // Whole scene pans 2 px right per frame; predictions track perfectly.
  const int h = 16, w = 24, dx = 2, frames = 5;
  std::vector<MotionMask> preds;
  std::vector<flow::FlowField> flows;
  for (int t = 0; t < frames; ++t) {
    MotionMask m(h, w);
    for (int y = 4; y < 9; ++y)
      for (int x = 3 + dx * t; x < 8 + dx * t; ++x) m.at(y, x) = 1;
    preds.push_back(m);
    if (t > 0) {
      flow::FlowField f(h, w);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) f.set(y, x, static_cast<float>(dx), 0.f);
      flows.push_back(f);
    }
  }
  const double s = eval::temporal_stability(preds, flows);
  CHECK(s >= 1.0 - 1.0 / (h * w));
  CHECK(s <= 1.0);
}

TEST_CASE("temporal stability matches an explicit-warp oracle") {
  Rng rng(73);
  for (int trial = 0; trial < 40; ++trial) {
    const int h = rng.uniform_int(4, 12), w = rng.uniform_int(4, 12);
    const int frames = rng.uniform_int(2, 5);
    std::vector<MotionMask> preds;
    std::vector<flow::FlowField> flows;
    for (int t = 0; t < frames; ++t) {
      preds.push_back(random_mask(h, w, rng, trial % 4 == 0 ? 0.1 : 0.0));
      if (t > 0) {
        flow::FlowField f(h, w);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            f.set(y, x, static_cast<float>(rng.uniform_int(-3, 3)),
                  static_cast<float>(rng.uniform_int(-3, 3)));
        flows.push_back(f);
      }
    }
    CHECK(eval::temporal_stability(preds, flows) == brute_stability(preds, flows));
  }
}

TEST_CASE("csv report emission is stable and complete") {
  eval::EvalReport r;
  r.iou_per_class = {0.75, 0.25};
  r.miou = 0.5;
  r.moving_iou = 0.25;
  r.stability = 0.875;
  r.fps = 12.5;
  r.num_eval_pixels = 12345;
  CHECK(eval::report_csv_header() ==
        "iou_class0,iou_class1,miou,moving_iou,temporal_stability,fps,num_eval_pixels");
  CHECK(eval::report_csv_row(r) == "0.75,0.25,0.5,0.25,0.875,12.5,12345");
  CHECK(eval::report_table(r).find("mIoU") != std::string::npos);
}

namespace {

void write_eval_dataset(const std::string& root, const std::string& seq, int n, int h, int w,
                        Rng& rng, bool with_exact_flow) {
  fs::create_directories(root + "/" + seq + "/image");
  fs::create_directories(root + "/" + seq + "/flow");
  fs::create_directories(root + "/" + seq + "/mask");
  if (with_exact_flow) fs::create_directories(root + "/" + seq + "/flow_gt");
  for (int i = 0; i < n; ++i) {
    img::ImageU8 im(h, w, 3);
    for (auto& p : im.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
    img::write_png(data::image_path(root, seq, i), im);
    flow::FlowField f(h, w);
    for (auto& v : f.data) v = static_cast<float>(rng.normal());
    flow::write_flo(data::flow_path(root, seq, i), f);
    if (with_exact_flow) {
      flow::FlowField fg(h, w);
      for (auto& v : fg.data) v = static_cast<float>(rng.uniform_int(-1, 1));
      flow::write_flo(data::flow_gt_path(root, seq, i), fg);
    }
    MotionMask m(h, w);
    for (int y = 2; y < 5; ++y)
      for (int x = 2; x < 6; ++x) m.at(y, x) = 1;
    data::save_mask(data::mask_path(root, seq, i), m);
  }
}

}  // namespace

TEST_CASE("evaluate slides windows over sequences and is deterministic") {
  TmpDir tmp("evalrun");
  Rng rng(74);
  const int h = 16, w = 16, len = 5, t_window = 2;
  write_eval_dataset(tmp.str(), "s0", len, h, w, rng, true);
  write_eval_dataset(tmp.str(), "s1", len, h, w, rng, false);

  net::Model model(net::ModelConfig::tiny(net::Variant::RGB_FLOW, t_window), 21);
  const auto r0 = eval::evaluate(model, tmp.str());
  // Two sequences, windows at end = 1..4 each.
  CHECK(r0.num_eval_pixels == 2 * (len - t_window + 1) * h * w);
  CHECK(r0.miou >= 0.0);
  CHECK(r0.miou <= 1.0);
  CHECK(r0.stability >= 0.0);
  CHECK(r0.stability <= 1.0);
  CHECK(r0.moving_iou == r0.iou_per_class[1]);
  // s1 has no flow_gt/, so the run is flagged as observed-flow.
  CHECK_FALSE(r0.stability_exact_flow);
  CHECK(r0.fps == 0.0);

  const auto r1 = eval::evaluate(model, tmp.str());
  CHECK(eval::report_csv_row(r0) == eval::report_csv_row(r1));

  TmpDir exact_only("evalexact");
  Rng rng2(75);
  write_eval_dataset(exact_only.str(), "s0", len, h, w, rng2, true);
  const auto r2 = eval::evaluate(model, exact_only.str());
  CHECK(r2.stability_exact_flow);

  CHECK_THROWS_AS(eval::evaluate(model, tmp / "missing_root"), NotFoundError);
}

TEST_CASE("benchmark reports order statistics and scaling") {
  net::Model model(net::ModelConfig::tiny(net::Variant::MULTI_GRU, 2), 22);
  CHECK_THROWS_AS(eval::benchmark_fps(model, 16, 16, 0, 9), ArgumentError);
  CHECK_THROWS_AS(eval::benchmark_fps(model, 16, 16, -1, 10), ArgumentError);

  auto small = eval::benchmark_fps(model, 16, 16, 1, 10);
  CHECK(small.fps > 0.0);
  CHECK(small.p95_s >= small.median_s);
  CHECK(small.iters == 10);
  CHECK(small.samples_s.size() == 10);

  // Doubling the spatial area slows the forward pass; compare best of three
  // medians per size to shrug off scheduler noise.
  double best_small = 1e9, best_large = 1e9;
  for (int i = 0; i < 3; ++i) {
    best_small = std::min(best_small, eval::benchmark_fps(model, 16, 16, 0, 10).median_s);
    best_large = std::min(best_large, eval::benchmark_fps(model, 16, 32, 0, 10).median_s);
  }
  CHECK(best_large > best_small);

  const std::string row = eval::bench_csv_row("MULTI_GRU", 2, 16, 16, small);
  CHECK(eval::bench_csv_header() == "variant,T,h,w,iters,median_ms,p95_ms,fps");
  CHECK(row.substr(0, 10) == "MULTI_GRU,");
  CHECK(std::count(row.begin(), row.end(), ',') == 7);
}

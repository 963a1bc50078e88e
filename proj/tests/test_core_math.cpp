#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "mseg/autograd.hpp"
#include "mseg/conv.hpp"
#include "mseg/errors.hpp"
#include "mseg/rng.hpp"
#include "mseg/tensor.hpp"
#include "support/fd_check.hpp"

using mseg::Rng;
using mseg::Tensor;
namespace ag = mseg::ag;
using mseg::test::fd_check;

namespace {

// Gather-form reference conv, independent of the im2col implementation.
Tensor conv2d_ref(const Tensor& x, const Tensor& w, int s, int p, int g) {
  const int h = x.dim(1), ww = x.dim(2);
  const int cout = w.dim(0), cin_g = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int oh = (h + 2 * p - kh) / s + 1, ow = (ww + 2 * p - kw) / s + 1;
  const int cout_g = cout / g;
  Tensor out({cout, oh, ow});
  for (int co = 0; co < cout; ++co) {
    const int grp = co / cout_g;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int c = 0; c < cin_g; ++c)
          for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
              const int iy = oy * s - p + ki, ix = ox * s - p + kj;
              if (iy < 0 || iy >= h || ix < 0 || ix >= ww) continue;
              acc += w.at4(co, c, ki, kj) * x.at3(grp * cin_g + c, iy, ix);
            }
        out.at3(co, oy, ox) = acc;
      }
  }
  return out;
}

// Gather-form reference transposed conv: sums x positions whose footprint
// covers the output pixel.
Tensor convt_ref(const Tensor& x, const Tensor& w, int s, int p, int oh, int ow) {
  const int cin = x.dim(0), ih = x.dim(1), iw = x.dim(2);
  const int cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  Tensor out({cout, oh, ow});
  for (int co = 0; co < cout; ++co)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int ci = 0; ci < cin; ++ci)
          for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
              const int ny = oy + p - ki, nx = ox + p - kj;
              if (ny % s != 0 || nx % s != 0 || ny < 0 || nx < 0) continue;
              const int i = ny / s, j = nx / s;
              if (i >= ih || j >= iw) continue;
              acc += x.at3(ci, i, j) * w.at4(ci, co, ki, kj);
            }
        out.at3(co, oy, ox) = acc;
      }
  return out;
}

Tensor randt(std::vector<int> shape, Rng& rng) { return Tensor::randn(std::move(shape), rng); }

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rank() == 2);
  CHECK(t.size() == 6);
  CHECK(t.at2(1, 2) == 6.0);
  t.add_scaled(Tensor::full({2, 3}, 0.5), 2.0);
  CHECK(t.at2(0, 0) == doctest::Approx(2.0));
  CHECK(t.abs_max() == doctest::Approx(7.0));
  CHECK(t.all_finite());
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0}), mseg::ArgumentError);
  CHECK_THROWS_AS(Tensor({-1, 3}), mseg::ArgumentError);
}

TEST_CASE("rng determinism and distribution") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  bool differs = false;
  for (int i = 0; i < 10; ++i) differs |= (a.next_u64() != c.next_u64());
  CHECK(differs);

  Rng r(7);
  double mean = 0.0, m2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    mean += v;
    m2 += v * v;
  }
  mean /= n;
  m2 /= n;
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(m2 - 1.0) < 0.05);

  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const int k = r.uniform_int(3, 5);
    CHECK(k >= 3);
    CHECK(k <= 5);
  }

  Rng base(9);
  Rng f1 = base.fork(1), f1b = Rng(9).fork(1), f2 = base.fork(2);
  CHECK(f1.next_u64() == f1b.next_u64());
  CHECK(f1.next_u64() != f2.next_u64());
}

TEST_CASE("channel shuffle permutation") {
  // Four channels, two groups: [a,b,c,d] -> [a,c,b,d].
  Tensor x({4, 1, 1});
  for (int i = 0; i < 4; ++i) x[i] = i + 1;
  auto v = ag::channel_shuffle(ag::constant(x), 2);
  CHECK(v->value[0] == 1.0);
  CHECK(v->value[1] == 3.0);
  CHECK(v->value[2] == 2.0);
  CHECK(v->value[3] == 4.0);

  // Shuffling with g then with C/g groups is the identity.
  Rng rng(1);
  Tensor y = randt({12, 2, 3}, rng);
  auto round = ag::channel_shuffle(ag::channel_shuffle(ag::constant(y), 3), 4);
  for (std::int64_t i = 0; i < y.size(); ++i) CHECK(round->value[i] == y[i]);
}

TEST_CASE("elementwise and reduction gradients") {
  Rng rng(11);
  const std::vector<int> shp{2, 3, 4};

  auto check1 = [&](const char* name, const std::function<ag::Var(const ag::Var&)>& op) {
    CAPTURE(name);
    auto r = fd_check(
        [&](std::vector<ag::Var>& ls) { return ag::sum_all(op(ls[0])); },
        {randt(shp, rng)});
    CHECK(r.max_err < 1e-3);
  };
  check1("relu", [](const ag::Var& v) { return ag::relu(v); });
  check1("sigmoid", [](const ag::Var& v) { return ag::sigmoid(v); });
  check1("tanh", [](const ag::Var& v) { return ag::tanh_op(v); });
  check1("scale", [](const ag::Var& v) { return ag::scale(v, -1.7); });
  check1("mean", [](const ag::Var& v) { return ag::scale(ag::mean_all(v), 3.0); });

  auto r2 = fd_check(
      [&](std::vector<ag::Var>& ls) {
        return ag::sum_all(ag::mul(ag::add(ls[0], ls[1]), ag::sub(ls[0], ls[1])));
      },
      {randt(shp, rng), randt(shp, rng)});
  CHECK(r2.max_err < 1e-3);
}

TEST_CASE("shape op gradients") {
  Rng rng(13);
  auto r1 = fd_check(
      [&](std::vector<ag::Var>& ls) {
        auto cat = ag::concat_c({ls[0], ls[1]});
        auto shuf = ag::channel_shuffle(cat, 3);
        auto sl = ag::slice_c(shuf, 1, 5);
        return ag::sum_all(ag::mul(sl, sl));
      },
      {randt({2, 3, 4}, rng), randt({4, 3, 4}, rng)});
  CHECK(r1.max_err < 1e-3);

  auto r2 = fd_check(
      [&](std::vector<ag::Var>& ls) {
        return ag::sum_all(ag::mul(ag::spatial_crop(ls[0], 3, 2), ag::constant(Tensor::full({2, 3, 2}, 1.5))));
      },
      {randt({2, 5, 4}, rng)});
  CHECK(r2.max_err < 1e-3);

  auto r3 = fd_check(
      [&](std::vector<ag::Var>& ls) {
        return ag::sum_all(ag::add_channel_bias(ls[0], ls[1]));
      },
      {randt({3, 2, 2}, rng), randt({3}, rng)});
  CHECK(r3.max_err < 1e-3);

  auto r4 = fd_check(
      [&](std::vector<ag::Var>& ls) {
        auto st = ag::stack_time({ls[0], ls[1], ls[2]});
        auto tm = ag::temporal_mean(st);
        return ag::sum_all(ag::mul(tm, tm));
      },
      {randt({2, 3, 3}, rng), randt({2, 3, 3}, rng), randt({2, 3, 3}, rng)});
  CHECK(r4.max_err < 1e-3);
}

TEST_CASE("stack_time layout") {
  Tensor f0 = Tensor::from({2, 1, 2}, {1, 2, 3, 4});
  Tensor f1 = Tensor::from({2, 1, 2}, {5, 6, 7, 8});
  auto st = ag::stack_time({ag::constant(f0), ag::constant(f1)});
  CHECK(st->value.shape() == std::vector<int>{2, 2, 1, 2});
  // (c=0,t=0) = [1,2]; (c=0,t=1) = [5,6]; (c=1,t=0) = [3,4]; (c=1,t=1) = [7,8]
  CHECK(st->value.at4(0, 0, 0, 1) == 2.0);
  CHECK(st->value.at4(0, 1, 0, 0) == 5.0);
  CHECK(st->value.at4(1, 0, 0, 1) == 4.0);
  CHECK(st->value.at4(1, 1, 0, 0) == 7.0);
  auto tm = ag::temporal_mean(st);
  CHECK(tm->value.at3(0, 0, 0) == doctest::Approx(3.0));
  CHECK(tm->value.at3(1, 0, 1) == doctest::Approx(6.0));
}

TEST_CASE("batchnorm forward statistics and gradients") {
  Rng rng(17);
  Tensor x = randt({3, 4, 5}, rng);
  auto gamma = ag::constant(Tensor::full({3}, 1.0));
  auto beta = ag::constant(Tensor::zeros({3}));
  Tensor bm, bv;
  auto y = ag::batchnorm_train(ag::constant(x), gamma, beta, 1e-5, &bm, &bv);
  for (int c = 0; c < 3; ++c) {
    double m = 0.0, v = 0.0;
    for (int i = 0; i < 20; ++i) m += y->value[c * 20 + i];
    m /= 20;
    for (int i = 0; i < 20; ++i) {
      const double d = y->value[c * 20 + i] - m;
      v += d * d;
    }
    v /= 20;
    CHECK(std::abs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
    // Reported batch stats match direct computation.
    double xm = 0.0;
    for (int i = 0; i < 20; ++i) xm += x[c * 20 + i];
    xm /= 20;
    CHECK(bm[c] == doctest::Approx(xm).epsilon(1e-12));
  }

  auto r = fd_check(
      [&](std::vector<ag::Var>& ls) {
        auto out = ag::batchnorm_train(ls[0], ls[1], ls[2], 1e-5);
        return ag::sum_all(ag::mul(out, out));
      },
      {randt({2, 3, 4}, rng), randt({2}, rng), randt({2}, rng)});
  CHECK(r.max_err < 1e-3);

  Tensor rm = Tensor::from({2}, {0.3, -0.2});
  Tensor rv = Tensor::from({2}, {1.5, 0.7});
  auto r2 = fd_check(
      [&](std::vector<ag::Var>& ls) {
        auto out = ag::batchnorm_infer(ls[0], ls[1], ls[2], rm, rv, 1e-5);
        return ag::sum_all(ag::mul(out, out));
      },
      {randt({2, 3, 4}, rng), randt({2}, rng), randt({2}, rng)});
  CHECK(r2.max_err < 1e-3);

  // Inference mode is the plain affine map by hand.
  Tensor xi = randt({2, 2, 2}, rng);
  Tensor g2 = Tensor::from({2}, {1.1, 0.9}), b2 = Tensor::from({2}, {0.5, -0.25});
  auto yi = ag::batchnorm_infer(ag::constant(xi), ag::constant(g2), ag::constant(b2), rm, rv, 1e-5);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 4; ++i) {
      const double expect = g2[c] * (xi[c * 4 + i] - rm[c]) / std::sqrt(rv[c] + 1e-5) + b2[c];
      CHECK(yi->value[c * 4 + i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("weighted cross entropy against scalar oracle") {
  Rng rng(19);
  const int k = 2, h = 3, w = 4;
  Tensor logits = randt({k, h, w}, rng);
  std::vector<std::uint8_t> labels(h * w);
  for (auto& l : labels) {
    const double u = rng.uniform();
    l = u < 0.4 ? 0 : (u < 0.8 ? 1 : 255);
  }
  labels[0] = 0;  // ensure at least one valid pixel
  const std::vector<double> wts{0.6, 2.4};

  // Scalar oracle: plain log-sum-exp per pixel.
  double expect = 0.0;
  std::int64_t valid = 0;
  for (int p = 0; p < h * w; ++p) {
    if (labels[p] == 255) continue;
    ++valid;
    const double a = logits[p], b = logits[h * w + p];
    const double mx = std::max(a, b);
    const double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
    const double ly = labels[p] == 0 ? a : b;
    expect += wts[labels[p]] * (lse - ly);
  }
  expect /= static_cast<double>(valid);

  auto res = ag::weighted_softmax_ce(ag::constant(logits), labels, wts);
  CHECK(res.valid_pixels == valid);
  CHECK_FALSE(res.all_ignored);
  CHECK(res.loss->value[0] == doctest::Approx(expect).epsilon(1e-8));

  auto r = fd_check(
      [&](std::vector<ag::Var>& ls) { return ag::weighted_softmax_ce(ls[0], labels, wts).loss; },
      {logits});
  CHECK(r.max_err < 1e-3);

  std::vector<std::uint8_t> all_ignore(h * w, 255);
  auto res2 = ag::weighted_softmax_ce(ag::constant(logits), all_ignore, wts);
  CHECK(res2.all_ignored);
  CHECK(res2.loss->value[0] == 0.0);
}

TEST_CASE("conv2d matches gather-form reference") {
  Rng rng(23);
  struct Case {
    std::vector<int> xs, ws;
    int s, p, g;
  };
  const std::vector<Case> cases{
      {{3, 7, 9}, {4, 3, 3, 3}, 2, 1, 1},    // dense stem-like
      {{6, 5, 6}, {9, 2, 3, 3}, 1, 1, 3},    // grouped 3x3
      {{6, 5, 6}, {9, 2, 1, 1}, 1, 0, 3},    // grouped 1x1 fast path
      {{5, 6, 7}, {5, 1, 3, 3}, 2, 1, 5},    // depthwise stride 2
      {{4, 4, 4}, {3, 4, 1, 1}, 1, 0, 1},    // plain 1x1
      {{2, 6, 6}, {4, 2, 3, 3}, 1, 0, 1},    // no padding
  };
  for (const auto& c : cases) {
    CAPTURE(c.s);
    CAPTURE(c.g);
    Tensor x = randt(c.xs, rng), w = randt(c.ws, rng);
    auto y = ag::conv2d(ag::constant(x), ag::constant(w), c.s, c.p, c.g);
    Tensor ref = conv2d_ref(x, w, c.s, c.p, c.g);
    REQUIRE(y->value.same_shape(ref));
    for (std::int64_t i = 0; i < ref.size(); ++i)
      CHECK(y->value[i] == doctest::Approx(ref[i]).epsilon(1e-12));

    auto r = fd_check(
        [&](std::vector<ag::Var>& ls) {
          auto out = ag::conv2d(ls[0], ls[1], c.s, c.p, c.g);
          return ag::sum_all(ag::mul(out, out));
        },
        {x, w});
    CHECK(r.max_err < 1e-3);
  }
}

TEST_CASE("conv_transpose2d matches gather-form reference") {
  Rng rng(29);
  Tensor x = randt({3, 4, 5}, rng), w = randt({3, 2, 4, 4}, rng);
  const int s = 2, p = 1;
  const int full_h = (4 - 1) * s - 2 * p + 4;  // 7
  const int full_w = (5 - 1) * s - 2 * p + 4;  // 9

  for (const auto& [oh, ow] : std::vector<std::pair<int, int>>{{full_h, full_w}, {6, 8}}) {
    auto y = ag::conv_transpose2d(ag::constant(x), ag::constant(w), s, p, oh, ow);
    Tensor ref = convt_ref(x, w, s, p, oh, ow);
    REQUIRE(y->value.same_shape(ref));
    for (std::int64_t i = 0; i < ref.size(); ++i)
      CHECK(y->value[i] == doctest::Approx(ref[i]).epsilon(1e-12));

    auto r = fd_check(
        [&, oh = oh, ow = ow](std::vector<ag::Var>& ls) {
          auto out = ag::conv_transpose2d(ls[0], ls[1], s, p, oh, ow);
          return ag::sum_all(ag::mul(out, out));
        },
        {x, w});
    CHECK(r.max_err < 1e-3);
  }
  CHECK_THROWS_AS(
      ag::conv_transpose2d(ag::constant(x), ag::constant(w), s, p, full_h + 1, full_w),
      mseg::ArgumentError);
}

TEST_CASE("conv3d matches direct loops") {
  Rng rng(31);
  Tensor x = randt({2, 4, 5, 6}, rng), w = randt({3, 2, 3, 3, 3}, rng);
  const int st = 1, sh = 2, sw = 2, pt = 1, ph = 1, pw = 1;
  auto y = ag::conv3d(ag::constant(x), ag::constant(w), st, sh, sw, pt, ph, pw);
  const int ot = (4 + 2 - 3) / 1 + 1, oh = (5 + 2 - 3) / 2 + 1, ow = (6 + 2 - 3) / 2 + 1;
  REQUIRE(y->value.shape() == std::vector<int>{3, ot, oh, ow});
  for (int co = 0; co < 3; ++co)
    for (int oz = 0; oz < ot; ++oz)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (int ci = 0; ci < 2; ++ci)
            for (int kk = 0; kk < 3; ++kk)
              for (int ki = 0; ki < 3; ++ki)
                for (int kj = 0; kj < 3; ++kj) {
                  const int iz = oz * st - pt + kk, iy = oy * sh - ph + ki, ix = ox * sw - pw + kj;
                  if (iz < 0 || iz >= 4 || iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
                  acc += x.at4(ci, iz, iy, ix) *
                         w[(((static_cast<std::int64_t>(co) * 2 + ci) * 3 + kk) * 3 + ki) * 3 + kj];
                }
          CHECK(y->value.at4(co, oz, oy, ox) == doctest::Approx(acc).epsilon(1e-12));
        }

  auto r = fd_check(
      [&](std::vector<ag::Var>& ls) {
        auto out = ag::conv3d(ls[0], ls[1], st, sh, sw, pt, ph, pw);
        return ag::sum_all(ag::mul(out, out));
      },
      {randt({2, 3, 4, 4}, rng), randt({2, 2, 2, 3, 3}, rng)});
  CHECK(r.max_err < 1e-3);
}

TEST_CASE("pooling oracles and gradients") {
  Rng rng(37);
  Tensor x = randt({2, 7, 9}, rng);
  auto mp = ag::maxpool2d(ag::constant(x), 3, 2, 1);
  auto ap = ag::avgpool2d(ag::constant(x), 3, 2, 1);
  REQUIRE(mp->value.shape() == std::vector<int>{2, 4, 5});
  for (int c = 0; c < 2; ++c)
    for (int oy = 0; oy < 4; ++oy)
      for (int ox = 0; ox < 5; ++ox) {
        double best = -1e300, acc = 0.0;
        int cnt = 0;
        for (int ki = 0; ki < 3; ++ki)
          for (int kj = 0; kj < 3; ++kj) {
            const int iy = oy * 2 - 1 + ki, ix = ox * 2 - 1 + kj;
            if (iy < 0 || iy >= 7 || ix < 0 || ix >= 9) continue;
            best = std::max(best, x.at3(c, iy, ix));
            acc += x.at3(c, iy, ix);
            ++cnt;
          }
        CHECK(mp->value.at3(c, oy, ox) == doctest::Approx(best));
        CHECK(ap->value.at3(c, oy, ox) == doctest::Approx(acc / cnt));
      }

  // k=3 s=2 p=1 halves with ceiling.
  auto mp2 = ag::maxpool2d(ag::constant(Tensor::zeros({1, 10, 13})), 3, 2, 1);
  CHECK(mp2->value.shape() == std::vector<int>{1, 5, 7});

  auto r1 = fd_check(
      [&](std::vector<ag::Var>& ls) {
        return ag::sum_all(ag::mul(ag::maxpool2d(ls[0], 3, 2, 1), ag::constant(Tensor::full({2, 3, 3}, 0.7))));
      },
      {randt({2, 5, 5}, rng)});
  CHECK(r1.max_err < 1e-3);

  auto r2 = fd_check(
      [&](std::vector<ag::Var>& ls) {
        auto out = ag::avgpool2d(ls[0], 3, 2, 1);
        return ag::sum_all(ag::mul(out, out));
      },
      {randt({2, 5, 5}, rng)});
  CHECK(r2.max_err < 1e-3);
}

TEST_CASE("backward accumulates across shared subexpressions") {
  // f(x) = sum(x*x) + 2*sum(x) has gradient 2x + 2.
  Tensor x = Tensor::from({3}, {1.0, -2.0, 0.5});
  auto lx = ag::leaf(x);
  auto root = ag::add(ag::sum_all(ag::mul(lx, lx)), ag::scale(ag::sum_all(lx), 2.0));
  ag::backward(root);
  for (int i = 0; i < 3; ++i) CHECK(lx->grad[i] == doctest::Approx(2.0 * x[i] + 2.0));

  // Used twice in a product: d/dx sum(x ⊙ x) via two references.
  auto lx2 = ag::leaf(x);
  auto root2 = ag::sum_all(ag::mul(lx2, lx2));
  ag::backward(root2);
  for (int i = 0; i < 3; ++i) CHECK(lx2->grad[i] == doctest::Approx(2.0 * x[i]));
}

TEST_CASE("no-grad subgraphs are pruned") {
  auto c1 = ag::constant(Tensor::full({2}, 1.0));
  auto c2 = ag::constant(Tensor::full({2}, 2.0));
  auto s = ag::mul(c1, c2);
  CHECK_FALSE(s->needs_grad);
  CHECK(s->parents.empty());

  auto l = ag::leaf(Tensor::full({2}, 3.0));
  auto t = ag::mul(s, l);
  CHECK(t->needs_grad);
  ag::backward(ag::sum_all(t));
  CHECK(l->grad[0] == doctest::Approx(2.0));
}

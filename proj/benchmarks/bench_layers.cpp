#include <benchmark/benchmark.h>

#include "mseg/autograd.hpp"
#include "mseg/conv.hpp"
#include "mseg/rng.hpp"
#include "mseg/tensor.hpp"

namespace ag = mseg::ag;
using mseg::Rng;
using mseg::Tensor;

namespace {

void BM_conv2d_stem(benchmark::State& state) {
  Rng rng(1);
  auto x = ag::constant(Tensor::randn({3, 64, 160}, rng));
  auto w = ag::constant(Tensor::randn({24, 3, 3, 3}, rng, 0.1));
  for (auto _ : state) {
    auto y = ag::conv2d(x, w, 2, 1, 1);
    benchmark::DoNotOptimize(y->value.data());
  }
}
BENCHMARK(BM_conv2d_stem);

void BM_conv2d_grouped_1x1(benchmark::State& state) {
  Rng rng(2);
  auto x = ag::constant(Tensor::randn({48, 8, 20}, rng));
  auto w = ag::constant(Tensor::randn({48, 16, 1, 1}, rng, 0.1));
  for (auto _ : state) {
    auto y = ag::conv2d(x, w, 1, 0, 3);
    benchmark::DoNotOptimize(y->value.data());
  }
}
BENCHMARK(BM_conv2d_grouped_1x1);

void BM_conv2d_depthwise(benchmark::State& state) {
  Rng rng(3);
  auto x = ag::constant(Tensor::randn({48, 8, 20}, rng));
  auto w = ag::constant(Tensor::randn({48, 1, 3, 3}, rng, 0.1));
  for (auto _ : state) {
    auto y = ag::conv2d(x, w, 1, 1, 48);
    benchmark::DoNotOptimize(y->value.data());
  }
}
BENCHMARK(BM_conv2d_depthwise);

void BM_conv_transpose2d_x8(benchmark::State& state) {
  Rng rng(4);
  auto x = ag::constant(Tensor::randn({2, 8, 20}, rng));
  auto w = ag::constant(Tensor::randn({2, 2, 16, 16}, rng, 0.05));
  for (auto _ : state) {
    auto y = ag::conv_transpose2d(x, w, 8, 4, 64, 160);
    benchmark::DoNotOptimize(y->value.data());
  }
}
BENCHMARK(BM_conv_transpose2d_x8);

}  // namespace

BENCHMARK_MAIN();

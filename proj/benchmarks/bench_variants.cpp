#include <benchmark/benchmark.h>

#include <vector>

#include "mseg/network.hpp"
#include "mseg/rng.hpp"
#include "mseg/tensor.hpp"

using namespace mseg;

namespace {

struct Inputs {
  std::vector<Tensor> rgb, flow;
};

Inputs make_inputs(int T, int h, int w) {
  Rng rng(1234);
  Inputs in;
  for (int t = 0; t < T; ++t) {
    in.rgb.push_back(Tensor::randn({3, h, w}, rng, 0.25));
    in.flow.push_back(Tensor::randn({3, h, w}, rng, 0.25));
  }
  return in;
}

void forward_variant(benchmark::State& state, net::Variant v) {
  const int T = 4, h = static_cast<int>(state.range(0)), w = 2 * h;
  net::Model model(net::ModelConfig::desk(v, T), 77);
  const Inputs in = make_inputs(T, h, w);
  // one warm pass so lazily sized state is allocated outside the timing loop
  model.forward_encoded(in.rgb, in.flow, false);
  for (auto _ : state) {
    auto out = model.forward_encoded(in.rgb, in.flow, false);
    benchmark::DoNotOptimize(out.logits->value.data());
  }
  state.counters["params"] = static_cast<double>(model.param_count());
}

}  // namespace

BENCHMARK_CAPTURE(forward_variant, rgb_only, net::Variant::RGB_ONLY)->Arg(64)->Arg(128);
BENCHMARK_CAPTURE(forward_variant, rgb_flow, net::Variant::RGB_FLOW)->Arg(64)->Arg(128);
BENCHMARK_CAPTURE(forward_variant, stacking, net::Variant::STACKING)->Arg(64)->Arg(128);
BENCHMARK_CAPTURE(forward_variant, conv3d, net::Variant::CONV3D)->Arg(64)->Arg(128);
BENCHMARK_CAPTURE(forward_variant, early_lstm, net::Variant::EARLY_LSTM)->Arg(64)->Arg(128);
BENCHMARK_CAPTURE(forward_variant, late_lstm, net::Variant::LATE_LSTM)->Arg(64)->Arg(128);
BENCHMARK_CAPTURE(forward_variant, multi_lstm, net::Variant::MULTI_LSTM)->Arg(64)->Arg(128);
BENCHMARK_CAPTURE(forward_variant, multi_gru, net::Variant::MULTI_GRU)->Arg(64)->Arg(128);
BENCHMARK_CAPTURE(forward_variant, multi_2filters, net::Variant::MULTI_2FILTERS)
    ->Arg(64)
    ->Arg(128);

BENCHMARK_MAIN();

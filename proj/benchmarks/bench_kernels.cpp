#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "ecgf/dsp.hpp"
#include "ecgf/metrics.hpp"
#include "ecgf/nnet.hpp"
#include "ecgf/rng.hpp"

using namespace ecgf;

namespace {

std::vector<float> random_floats(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = float(2 * uniform01(rng) - 1);
  return v;
}

void BM_Conv1d(benchmark::State& state) {
  const std::size_t channels = std::size_t(state.range(0)), length = 500;
  nn::Tensor3<float> x(8, channels, length);
  x.data = random_floats(x.size(), 1);
  const auto w = random_floats(channels * channels * 7, 2);
  const std::vector<float> bias(channels, 0.f);
  for (auto _ : state) {
    auto y = nn::conv1d<float>(x, w, bias, channels, 7, 1, 1);
    benchmark::DoNotOptimize(y.data.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(8 * channels * channels * 7 * length));
}
BENCHMARK(BM_Conv1d)->Arg(16)->Arg(32)->Arg(64);

void BM_Biquad(benchmark::State& state) {
  const auto c = dsp::design_biquad(dsp::FilterKind::notch, 50, 500, 30);
  std::vector<double> x(std::size_t(state.range(0)));
  for (std::size_t t = 0; t < x.size(); ++t) x[t] = std::sin(0.01 * double(t));
  const bool zero_phase = state.range(1) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(dsp::apply_iir(x, c, zero_phase));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Biquad)->Args({5000, 0})->Args({5000, 1})->Args({50000, 1});

void BM_Auroc(benchmark::State& state) {
  const std::size_t n = std::size_t(state.range(0));
  Rng rng(3);
  std::vector<double> scores(n);
  std::vector<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = uniform01(rng) < 0.3;
    scores[i] = uniform01(rng) + 0.3 * labels[i];
  }
  for (auto _ : state) benchmark::DoNotOptimize(metrics::auroc(scores, labels));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Auroc)->Arg(1000)->Arg(100000);

void BM_ForwardEval(benchmark::State& state) {
  const auto config = state.range(0) ? nn::ModelConfig::desk(12, 8) : nn::ModelConfig::micro(12, 8);
  const auto model = nn::build_model<float>(config, 1);
  nn::Tensor3<float> batch(8, 12, 500);
  batch.data = random_floats(batch.size(), 4);
  for (auto _ : state) {
    auto r = nn::forward_eval(model, batch);
    benchmark::DoNotOptimize(r.logits.data());
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_ForwardEval)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();

#include <random>

#include <benchmark/benchmark.h>

#include "crispr/bias_detector.hpp"
#include "crispr/kernels.hpp"
#include "crispr/oracles.hpp"

using namespace crispr;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  Matrix m(r, c);
  for (double& v : m.values()) v = d(rng);
  return m;
}

template <bool Parallel>
void BM_Linear(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix x = random_matrix(n, 512, 1), w = random_matrix(512, 2048, 2);
  const std::vector<double> bias(2048, 0.1);
  Matrix out(n, 2048);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::linear(x, w, bias, out);
    else kernels::linear_serial(x, w, bias, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n) * 512 * 2048);
}

void BM_Detect(benchmark::State& state) {
  static const PlantedFixture fx = build_planted_fixture(7);
  Dataset sample;
  sample.name = fx.dataset.name;
  sample.instances.assign(fx.dataset.instances.begin(), fx.dataset.instances.begin() + 10);
  const auto exec = state.range(0) ? Execution::parallel : Execution::serial;
  for (auto _ : state) benchmark::DoNotOptimize(detect(fx.model, sample, default_instructions().templates[0], exec));
}

}  // namespace

BENCHMARK(BM_Linear<false>)->Arg(16)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Linear<true>)->Arg(16)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Detect)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

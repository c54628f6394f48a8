#include <benchmark/benchmark.h>

#include <random>

#include "smartcast/lstm.hpp"

namespace lstm = smartcast::lstm;

namespace {

lstm::SequenceBatch random_batch(int steps, int dim, int batch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  lstm::SequenceBatch b(static_cast<std::size_t>(steps), lstm::BatchMatrix(dim, batch));
  for (auto& m : b) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  }
  return b;
}

lstm::Architecture arch_for(int which) { return which == 0 ? lstm::Architecture::soil() : lstm::Architecture::index(); }

// Args: architecture (0 soil, 1 index), batch size.
void BM_Forward(benchmark::State& state) {
  const auto arch = arch_for(static_cast<int>(state.range(0)));
  const auto model = lstm::init_params(arch, 1);
  const int steps = arch.horizon == 1 ? 5 : 30;
  const auto batch = random_batch(steps, arch.input_dim, static_cast<int>(state.range(1)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(lstm::seq2seq_forward(model, batch));
  state.SetItemsProcessed(state.iterations() * state.range(1));
}
BENCHMARK(BM_Forward)->Args({0, 1})->Args({0, 32})->Args({1, 1})->Args({1, 256})->Unit(benchmark::kMicrosecond);

void BM_ForwardBackward(benchmark::State& state) {
  const auto arch = arch_for(static_cast<int>(state.range(0)));
  const auto model = lstm::init_params(arch, 1);
  const int steps = arch.horizon == 1 ? 5 : 30;
  const int b = static_cast<int>(state.range(1));
  const auto batch = random_batch(steps, arch.input_dim, b, 2);
  const lstm::BatchMatrix target = lstm::BatchMatrix::Zero(arch.horizon, b);
  lstm::ForwardCache cache;
  for (auto _ : state) {
    lstm::seq2seq_forward(model, batch, &cache);
    benchmark::DoNotOptimize(lstm::backward(model, cache, target, lstm::Loss::mse));
  }
  state.SetItemsProcessed(state.iterations() * b);
}
BENCHMARK(BM_ForwardBackward)->Args({0, 32})->Args({1, 64})->Unit(benchmark::kMillisecond);

}  // namespace

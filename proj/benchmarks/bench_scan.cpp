#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mlma/ctc.hpp"
#include "mlma/ops.hpp"
#include "mlma/ssm.hpp"

namespace {

using namespace mlma;

constexpr std::size_t kChannels = 32;
constexpr std::size_t kStates = 16;

template <typename T>
Tensor<T> random_input(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<T> data(rows * cols);
  for (auto& v : data) v = static_cast<T>(normal(rng));
  return Tensor<T>({rows, cols}, std::move(data));
}

template <typename T>
void BM_ScanSequential(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const auto core = ssm::SsmCoreParams<T>::create(kChannels, kStates, rng);
  const auto x = random_input<T>(t, kChannels, 2);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(ssm::ssm_scan_sequential(x, core));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(t));
}

template <typename T>
void BM_ScanChunked(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const auto chunk = static_cast<std::size_t>(state.range(1));
  std::mt19937_64 rng(1);
  const auto core = ssm::SsmCoreParams<T>::create(kChannels, kStates, rng);
  const auto x = random_input<T>(t, kChannels, 2);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(ssm::ssm_scan_chunked(x, core, chunk));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(t));
}

// Forward plus backward through the scan, as in training.
void BM_ScanTrainingStep(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const auto chunk = static_cast<std::size_t>(state.range(1));
  std::mt19937_64 rng(1);
  const auto core = ssm::SsmCoreParams<float>::create(kChannels, kStates, rng);
  const auto data = random_input<float>(t, kChannels, 2);
  for (auto _ : state) {
    Tensor<float> x({t, kChannels}, std::vector<float>(data.data().begin(), data.data().end()), true);
    backward(sum(ssm::ssm_scan_chunked(x, core, chunk)));
    benchmark::DoNotOptimize(x.grad());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(t));
}

void BM_CtcLoss(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const auto lattice = log_softmax(random_input<double>(t, 32, 3));
  std::vector<TokenId> target;
  for (std::size_t i = 0; i < t / 3; ++i) target.push_back(static_cast<TokenId>(3 + i % 29));
  for (auto _ : state) benchmark::DoNotOptimize(ctc::ctc_loss(lattice, target));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(t));
}

BENCHMARK_TEMPLATE(BM_ScanSequential, float)->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK_TEMPLATE(BM_ScanChunked, float)->ArgsProduct({{256, 4096}, {1, 8, 64, 256}});
BENCHMARK_TEMPLATE(BM_ScanSequential, double)->Arg(1024);
BENCHMARK_TEMPLATE(BM_ScanChunked, double)->ArgsProduct({{1024}, {8, 64}});
BENCHMARK(BM_ScanTrainingStep)->ArgsProduct({{256}, {1, 64, 256}});
BENCHMARK(BM_CtcLoss)->Arg(100)->Arg(400);

}  // namespace

BENCHMARK_MAIN();

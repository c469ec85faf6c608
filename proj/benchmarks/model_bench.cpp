#include <benchmark/benchmark.h>

#include "lqiq/models.hpp"
#include "lqiq/ops.hpp"
#include "lqiq/uncertainty.hpp"

namespace lqiq {
namespace {

Tensor<float> images(std::size_t batch, Rng& rng) {
  std::vector<float> v(batch * 784);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return Tensor<float>({batch, 1, 28, 28}, v);
}

Tensor<float> taus(std::size_t batch, std::size_t k, Rng& rng) {
  std::vector<float> v(batch * k);
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  return Tensor<float>({batch, k}, v);
}

void BM_IqnForward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  Rng rng(5);
  const IqnModel<float> model(ModelSpec{}, rng);
  const auto x = images(batch, rng);
  const auto t = taus(batch, 64, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, t, false));
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_IqnForward)->Arg(1)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_IqnTrainStep(benchmark::State& state) {
  Rng rng(6);
  const IqnModel<float> model(ModelSpec{}, rng);
  const auto x = images(64, rng);
  const auto t = taus(64, 64, rng);
  for (auto _ : state) {
    Rng dropout_rng(7);
    sum(model.forward(x, t, true, &dropout_rng)).backward();
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_IqnTrainStep)->Unit(benchmark::kMillisecond);

// Head only: features are computed once and many taus are evaluated.
void BM_IqnQuantiles(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  Rng rng(8);
  const IqnModel<float> model(ModelSpec{}, rng);
  std::vector<float> f(16 * 128);
  for (auto& v : f) v = static_cast<float>(rng.uniform());
  const Tensor<float> features({16, 128}, f);
  const auto t = taus(16, k, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(model.quantiles(features, t));
  state.SetItemsProcessed(state.iterations() * 16 * k);
}
BENCHMARK(BM_IqnQuantiles)->Arg(64)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_EstimateDistributions(benchmark::State& state) {
  Rng rng(9);
  const IqnModel<float> model(ModelSpec{}, rng);
  LabeledDataset ds;
  ds.images = images(32, rng);
  ds.labels.assign(32, 0);
  ds.num_classes = 10;
  ds.split = Split::kTest;
  const auto k = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(estimate_distributions(model, ds, k, 1));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_EstimateDistributions)->Arg(1000)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace lqiq

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "lqiq/losses.hpp"
#include "lqiq/ops.hpp"
#include "lqiq/rng.hpp"

namespace lqiq {
namespace {

Tensor<float> random(Shape shape, Rng& rng, bool requires_grad = false) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return Tensor<float>(std::move(shape), v, requires_grad);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const auto a = random({n, n}, rng), b = random({n, n}, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

// The second backbone convolution at MNIST size: [64 x 32 x 26 x 26] -> 64 channels.
void BM_Conv2dForward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const auto x = random({batch, 32, 26, 26}, rng);
  const auto w = random({64, 32, 3, 3}, rng), b = random({64}, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b));
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_Conv2dForward)->Arg(1)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  auto x = random({batch, 32, 26, 26}, rng, true);
  auto w = random({64, 32, 3, 3}, rng, true), b = random({64}, rng, true);
  for (auto _ : state) {
    x.zero_grad();
    w.zero_grad();
    b.zero_grad();
    sum(conv2d(x, w, b)).backward();
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_Conv2dBackward)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_QuantileLoss(benchmark::State& state) {
  Rng rng(4);
  auto pred = random({64, 64}, rng, true);
  const auto target = random({64}, rng);
  std::vector<float> t(64 * 64);
  for (auto& v : t) v = static_cast<float>(rng.uniform());
  const Tensor<float> taus({64, 64}, t);
  for (auto _ : state) {
    pred.zero_grad();
    quantile_loss(pred, target, taus, QuantileLossConfig{}).backward();
  }
}
BENCHMARK(BM_QuantileLoss);

}  // namespace
}  // namespace lqiq

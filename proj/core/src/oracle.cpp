#include "lqiq/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lqiq/errors.hpp"
#include "lqiq/losses.hpp"
#include "lqiq/ops.hpp"
#include "lqiq/training.hpp"
#include "lqiq/uncertainty.hpp"

namespace lqiq {

namespace {

constexpr std::size_t kImageSide = 8;

TrainConfig synthetic_config(std::uint64_t seed, std::size_t epochs) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.epochs = epochs;
  cfg.batch_size = 64;
  cfg.dropout_enabled = false;
  return cfg;
}

Classifier<float> untrained_classifier(const LabeledDataset& images, std::uint64_t seed) {
  ModelSpec spec;
  spec.in_channels = images.channels();
  spec.height = images.height();
  spec.width = images.width();
  spec.num_classes = 2;
  spec.dropout_enabled = false;
  Rng rng = make_rng(seed, RngStream::kClassifierInit);
  return Classifier<float>(spec, rng);
}

// Z_tau for example 0 at the given taus.
std::vector<double> quantiles_at(const IqnModel<float>& model, const LabeledDataset& data,
                                 std::span<const double> taus) {
  NoGradGuard no_grad;
  const std::size_t first[1] = {0};
  const auto features =
      model.backbone().forward(gather_batch(data, first).images, false, nullptr);
  const auto z = model.quantiles(
      features, Tensor<float>({1, taus.size()}, std::vector<float>(taus.begin(), taus.end())));
  return {z.data().begin(), z.data().end()};
}

}  // namespace

double empirical_quantile(std::span<const double> values, double tau) {
  if (values.empty()) throw ParameterError("empirical_quantile of an empty sample");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ParameterError("tau must lie in [0, 1]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double rank = std::ceil(tau * static_cast<double>(sorted.size()));
  const auto k = static_cast<std::size_t>(std::max(rank, 1.0)) - 1;
  return sorted[std::min(k, sorted.size() - 1)];
}

ConstantQuantileFit fit_constant_quantile(std::span<const double> samples, double tau,
                                          std::size_t steps, AdadeltaOptions options) {
  if (samples.empty()) throw ParameterError("fit_constant_quantile needs samples");
  const std::size_t n = samples.size();
  Tensor<double> c({1, 1}, {0.0}, true);
  const Tensor<double> target({n}, std::vector<double>(samples.begin(), samples.end()));
  const auto taus = Tensor<double>::full({n, 1}, tau);
  Adadelta<double> opt({{"c", c}}, options);

  ConstantQuantileFit fit;
  fit.tau = tau;
  fit.steps = steps;
  for (std::size_t s = 0; s < steps; ++s) {
    opt.zero_grad();
    const auto loss = pinball_loss(repeat_rows(c, n), target, taus);
    loss.backward();
    opt.step();
    fit.final_loss = loss.item();
  }
  fit.fitted = c.item();
  fit.empirical = empirical_quantile(samples, tau);
  return fit;
}

bool OracleCheck::passed() const {
  return std::isfinite(observed) && std::abs(observed - expected) <= tolerance;
}

LabeledDataset make_synthetic_images(std::size_t n, std::size_t side, bool identical,
                                     std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t per_image = side * side;
  std::vector<float> pixels(n * per_image);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < per_image; ++p) {
      pixels[i * per_image + p] =
          identical && i > 0 ? pixels[p] : static_cast<float>(rng.normal());
    }
  }
  LabeledDataset data;
  data.images = Tensor<float>({n, 1, side, side}, std::move(pixels));
  data.labels.assign(n, 0);
  data.num_classes = 2;
  data.source = identical ? "synthetic-identical" : "synthetic-noise";
  data.normalization = Normalization{{0.0f}, {1.0f}};
  return data;
}

std::vector<OracleCheck> pinball_oracle(std::uint64_t seed, std::size_t n) {
  const auto samples = make_synthetic_scalar_dataset(ScalarDistribution::kUniform, n, seed);
  std::vector<OracleCheck> checks;
  for (const double tau : {0.1, 0.5, 0.9}) {
    const auto fit = fit_constant_quantile(samples, tau);
    checks.push_back({"pinball", "tau=" + format_float(tau), fit.fitted, fit.empirical, 0.02});
  }
  return checks;
}

std::vector<OracleCheck> constant_target_oracle(std::uint64_t seed) {
  constexpr double kTarget = 0.7;
  const auto images = make_synthetic_images(2048, kImageSide, false, seed);
  const auto classifier = untrained_classifier(images, seed);
  const std::vector<float> targets(images.size(), static_cast<float>(kTarget));
  const auto cfg = synthetic_config(seed, 15);

  const auto iqn = train_iqn(classifier, images, targets, cfg);
  const auto estimates = estimate_distributions(iqn.model, images, 256, seed);
  const auto means = estimate_means(estimates);
  const double iqn_mean =
      std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(means.size());

  const auto scalar = train_scalar(classifier, images, targets, cfg);
  const auto scalar_values = estimate_scalar(scalar.model, images);
  const double scalar_mean =
      std::accumulate(scalar_values.begin(), scalar_values.end(), 0.0) /
      static_cast<double>(scalar_values.size());

  return {{"constant", "iqn mean", iqn_mean, kTarget, 0.05},
          {"constant", "scalar mean", scalar_mean, kTarget, 0.01}};
}

std::vector<OracleCheck> distribution_oracle(ScalarDistribution dist, std::uint64_t seed) {
  const bool bimodal = dist == ScalarDistribution::kBimodal;
  const std::string suite = bimodal ? "bimodal" : "uniform";
  const auto images = make_synthetic_images(4096, kImageSide, true, seed);
  const auto draws = make_synthetic_scalar_dataset(dist, images.size(), seed + 1);
  const std::vector<float> targets(draws.begin(), draws.end());
  // Sample quantiles of what the model actually saw.
  const std::vector<double> seen(targets.begin(), targets.end());

  auto cfg = synthetic_config(seed, 15);
  cfg.freeze_backbone = true;
  cfg.kappa = 0.01;
  const auto classifier = untrained_classifier(images, seed);
  const auto iqn = train_iqn(classifier, images, targets, cfg);

  const std::vector<double> taus =
      bimodal ? std::vector<double>{0.1, 0.25, 0.75, 0.9}
              : std::vector<double>{0.1, 0.25, 0.5, 0.75, 0.9};
  const double tolerance = bimodal ? 0.25 : 0.05;
  const auto predicted = quantiles_at(iqn.model, images, taus);
  std::vector<OracleCheck> checks;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    checks.push_back({suite, "q" + format_float(taus[i]), predicted[i],
                      empirical_quantile(seen, taus[i]), tolerance});
  }
  const auto estimate = estimate_distribution(iqn.model, images, 0, 4096, seed);
  const double sample_mean =
      std::accumulate(seen.begin(), seen.end(), 0.0) / static_cast<double>(seen.size());
  checks.push_back({suite, "mean", estimate.mean, sample_mean, bimodal ? 0.15 : 0.05});
  return checks;
}

std::vector<OracleCheck> run_oracle_suite(std::uint64_t seed) {
  std::vector<OracleCheck> all = pinball_oracle(seed);
  for (auto&& part : {constant_target_oracle(seed),
                      distribution_oracle(ScalarDistribution::kUniform, seed),
                      distribution_oracle(ScalarDistribution::kBimodal, seed)}) {
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

}  // namespace lqiq

#ifndef LQIQ_ORACLE_HPP_
#define LQIQ_ORACLE_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lqiq/data.hpp"
#include "lqiq/optim.hpp"

namespace lqiq {

// Inverse empirical CDF: the ceil(tau * n)-th smallest value (1-based),
// clamped to the sample. Any minimizer of the pinball loss over a constant
// lies between this order statistic and the next one.
double empirical_quantile(std::span<const double> values, double tau);

struct ConstantQuantileFit {
  double tau = 0.0;
  double fitted = 0.0;
  double empirical = 0.0;
  double final_loss = 0.0;
  std::size_t steps = 0;
};

// Fits one scalar c to `samples` by full-batch Adadelta on the pinball loss
// at a fixed tau, starting from c = 0.
ConstantQuantileFit fit_constant_quantile(std::span<const double> samples, double tau,
                                          std::size_t steps = 3000,
                                          AdadeltaOptions options = {});

struct OracleCheck {
  std::string suite;
  std::string name;
  double observed = 0.0;
  double expected = 0.0;
  double tolerance = 0.0;

  bool passed() const;
};

// n images of shape [1 x side x side], labelled 0. `identical` makes every
// image equal so a model sees only the target distribution.
LabeledDataset make_synthetic_images(std::size_t n, std::size_t side, bool identical,
                                     std::uint64_t seed);

// Pinball argmin: U(0,1) samples, taus 0.1 / 0.5 / 0.9, tolerance 0.02.
std::vector<OracleCheck> pinball_oracle(std::uint64_t seed, std::size_t n = 100000);
// IQN and scalar regressors trained on a constant target recover it.
std::vector<OracleCheck> constant_target_oracle(std::uint64_t seed);
// IQN on identical inputs recovers quantiles of a uniform or bimodal target.
std::vector<OracleCheck> distribution_oracle(ScalarDistribution dist,
                                             std::uint64_t seed);

std::vector<OracleCheck> run_oracle_suite(std::uint64_t seed);

}  // namespace lqiq

#endif  // LQIQ_ORACLE_HPP_

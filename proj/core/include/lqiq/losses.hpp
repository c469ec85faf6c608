#ifndef LQIQ_LOSSES_HPP_
#define LQIQ_LOSSES_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "lqiq/tensor.hpp"

namespace lqiq {

enum class QuantileLossMode {
  kHuber,       // |tau - 1{delta<0}| * huber_kappa(delta) / kappa
  kMsePinball,  // |tau - 1{delta<0}| * delta^2
};

std::string to_string(QuantileLossMode mode);
QuantileLossMode parse_quantile_loss_mode(const std::string& name);

struct QuantileLossConfig {
  double kappa = 1.0;
  std::size_t n_taus = 64;   // N
  std::size_t n_target = 1;  // N', one observed loss per example
  QuantileLossMode mode = QuantileLossMode::kHuber;

  // Throws ParameterError on kappa <= 0, n_taus == 0 or n_target != 1.
  void validate() const;
};

template <typename T>
struct CrossEntropy {
  Tensor<T> per_example;  // [b]
  Tensor<T> mean;         // rank 0
};

// per_example[i] = -log_probs[i, labels[i]]. Labels outside [0, C) throw
// ContractError.
template <typename T>
CrossEntropy<T> cross_entropy(const Tensor<T>& log_probs,
                              std::span<const std::int64_t> labels);

// Huber penalty: delta^2 / 2 inside [-kappa, kappa], linear outside.
double huber(double delta, double kappa);

// rho^kappa_tau(delta) = |tau - 1{delta < 0}| * huber(delta, kappa) / kappa.
double quantile_huber_elem(double delta, double tau, double kappa);

// Supervised quantile regression loss.
//
// predicted [b x N], target [b], taus [b x N]. With delta = target - predicted
// the loss is the batch mean of sum_i rho(delta_{b,i}) (N' = 1). `target` is
// treated as a constant; only `predicted` receives gradient.
template <typename T>
Tensor<T> quantile_loss(const Tensor<T>& predicted, const Tensor<T>& target,
                        const Tensor<T>& taus, const QuantileLossConfig& cfg);

// Mean of |tau - 1{delta<0}| * |delta| over all b x N entries; the kappa -> 0
// limit of the Huber form. Same shapes and target handling as quantile_loss.
template <typename T>
Tensor<T> pinball_loss(const Tensor<T>& predicted, const Tensor<T>& target,
                       const Tensor<T>& taus);

// Mean squared error between equally shaped tensors.
template <typename T>
Tensor<T> mse(const Tensor<T>& predicted, const Tensor<T>& target);

}  // namespace lqiq

#endif  // LQIQ_LOSSES_HPP_

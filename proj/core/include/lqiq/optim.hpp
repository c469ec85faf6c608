#ifndef LQIQ_OPTIM_HPP_
#define LQIQ_OPTIM_HPP_

#include <cstddef>
#include <string>
#include <vector>

#include "lqiq/checkpoint.hpp"
#include "lqiq/models.hpp"
#include "lqiq/tensor.hpp"

namespace lqiq {

struct AdadeltaOptions {
  double lr = 1.0;
  double rho = 0.9;
  double eps = 1e-6;
};

// Adadelta with a learning-rate multiplier:
//   sq_avg    <- rho * sq_avg + (1 - rho) * g^2
//   delta     <- -sqrt(acc_delta + eps) / sqrt(sq_avg + eps) * g
//   acc_delta <- rho * acc_delta + (1 - rho) * delta^2
//   param     <- param + lr * delta
template <typename T>
class Adadelta {
 public:
  Adadelta(std::vector<NamedTensor<T>> params, AdadeltaOptions options = {});

  // Applies one update. Every parameter must have a populated grad.
  void step();
  void zero_grad();

  double lr() const { return options_.lr; }
  void set_lr(double lr) { options_.lr = lr; }
  const AdadeltaOptions& options() const { return options_; }
  std::size_t steps() const { return steps_; }

  const std::vector<T>& sq_avg(std::size_t i) const { return sq_avg_.at(i); }
  const std::vector<T>& acc_delta(std::size_t i) const { return acc_delta_.at(i); }

  // Accumulators as "opt/<param>/sq_avg" and "opt/<param>/acc_delta" arrays
  // plus "opt/hyper": [lr, rho, eps, steps] as doubles, each stored as the
  // bit pattern of two consecutive f32 slots so the round trip is exact.
  std::vector<NamedArray> state_arrays() const;
  void load_state_arrays(std::span<const NamedArray> arrays);

 private:
  std::vector<NamedTensor<T>> params_;
  AdadeltaOptions options_;
  std::vector<std::vector<T>> sq_avg_;
  std::vector<std::vector<T>> acc_delta_;
  std::size_t steps_ = 0;
};

// Multiplies the learning rate by gamma every `step_every` epochs.
class StepLrSchedule {
 public:
  StepLrSchedule(double initial_lr, double gamma = 0.7, std::size_t step_every = 1);

  // Call once per finished epoch; returns the learning rate for the next one.
  double epoch_end();

  double current_lr() const { return current_lr_; }
  std::size_t epochs_elapsed() const { return epochs_; }
  double gamma() const { return gamma_; }

 private:
  double initial_lr_;
  double gamma_;
  std::size_t step_every_;
  std::size_t epochs_ = 0;
  double current_lr_;
};

}  // namespace lqiq

#endif  // LQIQ_OPTIM_HPP_

#include "lqiq/losses.hpp"

#include <cmath>

#include "lqiq/errors.hpp"
#include "lqiq/ops.hpp"

namespace lqiq {

namespace {

template <typename T>
void check_quantile_shapes(const Tensor<T>& predicted, const Tensor<T>& target,
                           const Tensor<T>& taus, const char* op) {
  if (predicted.rank() != 2 || taus.shape() != predicted.shape() ||
      target.shape() != Shape{predicted.dim(0)}) {
    throw DimensionError(std::string(op) + ": predicted " +
                         shape_string(predicted.shape()) + ", target " +
                         shape_string(target.shape()) + ", taus " +
                         shape_string(taus.shape()));
  }
  for (const T tau : taus.data()) {
    if (!(tau >= T{0} && tau <= T{1})) {
      throw ParameterError(std::string(op) + ": tau " +
                           std::to_string(static_cast<double>(tau)) +
                           " outside [0, 1]");
    }
  }
}

inline double asymmetric_weight(double delta, double tau) {
  return std::abs(tau - (delta < 0.0 ? 1.0 : 0.0));
}

// d rho / d delta for the Huber form.
double quantile_huber_slope(double delta, double tau, double kappa) {
  const double w = asymmetric_weight(delta, tau);
  const double huber_slope =
      std::abs(delta) <= kappa ? delta : kappa * (delta > 0.0 ? 1.0 : -1.0);
  return w * huber_slope / kappa;
}

// Elementwise loss over [b x n] with a per-element slope for the backward pass.
template <typename T, typename Value, typename Slope>
Tensor<T> reduce_quantile(const Tensor<T>& predicted, const Tensor<T>& target,
                          const Tensor<T>& taus, double reduce_scale,
                          Value value_of, Slope slope_of) {
  const std::size_t rows = predicted.dim(0), cols = predicted.dim(1);
  const auto pred = predicted.data();
  const auto tgt = target.data();
  const auto tau = taus.data();
  auto d_pred = std::make_shared<std::vector<T>>(pred.size());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      const double delta = static_cast<double>(tgt[r]) - static_cast<double>(pred[i]);
      total += value_of(delta, static_cast<double>(tau[i]));
      // delta = target - predicted, so d/dpred = -d/ddelta.
      (*d_pred)[i] =
          static_cast<T>(-slope_of(delta, static_cast<double>(tau[i])) * reduce_scale);
    }
  }
  return Tensor<T>::from_op(
      {}, {static_cast<T>(total * reduce_scale)}, {predicted},
      [d_pred](detail::Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * (*d_pred)[i];
      });
}

}  // namespace

std::string to_string(QuantileLossMode mode) {
  return mode == QuantileLossMode::kHuber ? "huber" : "mse-pinball";
}

QuantileLossMode parse_quantile_loss_mode(const std::string& name) {
  if (name == "huber") return QuantileLossMode::kHuber;
  if (name == "mse-pinball") return QuantileLossMode::kMsePinball;
  throw ParameterError("unknown quantile loss mode \"" + name +
                       "\" (expected huber or mse-pinball)");
}

void QuantileLossConfig::validate() const {
  if (!(kappa > 0.0)) throw ParameterError("kappa must be > 0");
  if (n_taus == 0) throw ParameterError("n_taus must be >= 1");
  if (n_target != 1) {
    throw ParameterError("n_target must be 1 for supervised loss targets");
  }
}

template <typename T>
CrossEntropy<T> cross_entropy(const Tensor<T>& log_probs,
                              std::span<const std::int64_t> labels) {
  auto per_example = scale(pick(log_probs, labels), T{-1});
  auto avg = mean(per_example);
  return {std::move(per_example), std::move(avg)};
}

double huber(double delta, double kappa) {
  const double a = std::abs(delta);
  return a <= kappa ? 0.5 * delta * delta : kappa * (a - 0.5 * kappa);
}

double quantile_huber_elem(double delta, double tau, double kappa) {
  return asymmetric_weight(delta, tau) * huber(delta, kappa) / kappa;
}

template <typename T>
Tensor<T> quantile_loss(const Tensor<T>& predicted, const Tensor<T>& target,
                        const Tensor<T>& taus, const QuantileLossConfig& cfg) {
  cfg.validate();
  check_quantile_shapes(predicted, target, taus, "quantile_loss");
  // Batch mean of the per-example sum over taus, scaled by 1/N'.
  const double reduce_scale =
      1.0 / (static_cast<double>(predicted.dim(0)) * static_cast<double>(cfg.n_target));
  const double kappa = cfg.kappa;
  if (cfg.mode == QuantileLossMode::kHuber) {
    return reduce_quantile(
        predicted, target, taus, reduce_scale,
        [kappa](double d, double tau) { return quantile_huber_elem(d, tau, kappa); },
        [kappa](double d, double tau) { return quantile_huber_slope(d, tau, kappa); });
  }
  return reduce_quantile(
      predicted, target, taus, reduce_scale,
      [](double d, double tau) { return asymmetric_weight(d, tau) * d * d; },
      [](double d, double tau) { return asymmetric_weight(d, tau) * 2.0 * d; });
}

template <typename T>
Tensor<T> pinball_loss(const Tensor<T>& predicted, const Tensor<T>& target,
                       const Tensor<T>& taus) {
  check_quantile_shapes(predicted, target, taus, "pinball_loss");
  const double reduce_scale = 1.0 / static_cast<double>(predicted.numel());
  return reduce_quantile(
      predicted, target, taus, reduce_scale,
      [](double d, double tau) { return asymmetric_weight(d, tau) * std::abs(d); },
      [](double d, double tau) {
        if (d == 0.0) return 0.0;
        return d > 0.0 ? tau : -(1.0 - tau);
      });
}

template <typename T>
Tensor<T> mse(const Tensor<T>& predicted, const Tensor<T>& target) {
  if (predicted.shape() != target.shape()) {
    throw DimensionError("mse: shape mismatch " + shape_string(predicted.shape()) +
                         " vs " + shape_string(target.shape()));
  }
  const auto diff = sub(predicted, target.detach());
  return mean(elementwise_mul(diff, diff));
}

#define LQIQ_INSTANTIATE_LOSSES(T)                                              \
  template CrossEntropy<T> cross_entropy(const Tensor<T>&,                      \
                                         std::span<const std::int64_t>);        \
  template Tensor<T> quantile_loss(const Tensor<T>&, const Tensor<T>&,          \
                                   const Tensor<T>&, const QuantileLossConfig&); \
  template Tensor<T> pinball_loss(const Tensor<T>&, const Tensor<T>&,           \
                                  const Tensor<T>&);                            \
  template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);

LQIQ_INSTANTIATE_LOSSES(float)
LQIQ_INSTANTIATE_LOSSES(double)

#undef LQIQ_INSTANTIATE_LOSSES

}  // namespace lqiq

#include "lqiq/optim.hpp"

#include <array>
#include <bit>
#include <cmath>

#include "lqiq/errors.hpp"

namespace lqiq {

template <typename T>
Adadelta<T>::Adadelta(std::vector<NamedTensor<T>> params, AdadeltaOptions options)
    : params_(std::move(params)), options_(options) {
  if (!(options.rho >= 0.0 && options.rho <= 1.0)) {
    throw ParameterError("adadelta: rho must lie in [0, 1]");
  }
  if (!(options.eps > 0.0)) throw ParameterError("adadelta: eps must be > 0");
  for (const auto& p : params_) {
    sq_avg_.emplace_back(p.tensor.numel(), T{0});
    acc_delta_.emplace_back(p.tensor.numel(), T{0});
  }
}

template <typename T>
void Adadelta<T>::step() {
  const T rho = static_cast<T>(options_.rho);
  const T one_minus_rho = static_cast<T>(1.0 - options_.rho);
  const T eps = static_cast<T>(options_.eps);
  const T lr = static_cast<T>(options_.lr);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<T> param = params_[i].tensor;
    if (!param.has_grad()) {
      throw ContractError("adadelta: parameter " + params_[i].name +
                          " has no gradient");
    }
    const auto grad = param.grad();
    auto values = param.mutable_data();
    auto& sq = sq_avg_[i];
    auto& acc = acc_delta_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const T g = grad[j];
      sq[j] = rho * sq[j] + one_minus_rho * g * g;
      const T delta = -std::sqrt(acc[j] + eps) / std::sqrt(sq[j] + eps) * g;
      acc[j] = rho * acc[j] + one_minus_rho * delta * delta;
      values[j] += lr * delta;
    }
  }
  ++steps_;
}

template <typename T>
void Adadelta<T>::zero_grad() {
  for (auto& p : params_) Tensor<T>(p.tensor).zero_grad();
}

template <typename T>
std::vector<NamedArray> Adadelta<T>::state_arrays() const {
  std::vector<NamedArray> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    std::vector<std::uint32_t> dims;
    for (auto d : params_[i].tensor.shape()) dims.push_back(static_cast<std::uint32_t>(d));
    out.push_back({"opt/" + params_[i].name + "/sq_avg", dims,
                   std::vector<float>(sq_avg_[i].begin(), sq_avg_[i].end())});
    out.push_back({"opt/" + params_[i].name + "/acc_delta", dims,
                   std::vector<float>(acc_delta_[i].begin(), acc_delta_[i].end())});
  }
  NamedArray hyper{"opt/hyper", {8}, {}};
  for (const double v : {options_.lr, options_.rho, options_.eps,
                         static_cast<double>(steps_)}) {
    const auto halves = std::bit_cast<std::array<float, 2>>(v);
    hyper.values.insert(hyper.values.end(), halves.begin(), halves.end());
  }
  out.push_back(std::move(hyper));
  return out;
}

template <typename T>
void Adadelta<T>::load_state_arrays(std::span<const NamedArray> arrays) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& sq = find_array(arrays, "opt/" + params_[i].name + "/sq_avg");
    const auto& acc = find_array(arrays, "opt/" + params_[i].name + "/acc_delta");
    if (sq.values.size() != sq_avg_[i].size() ||
        acc.values.size() != acc_delta_[i].size()) {
      throw DimensionError("adadelta state for " + params_[i].name +
                           " does not match the parameter size");
    }
    sq_avg_[i].assign(sq.values.begin(), sq.values.end());
    acc_delta_[i].assign(acc.values.begin(), acc.values.end());
  }
  const auto& hyper = find_array(arrays, "opt/hyper");
  if (hyper.values.size() != 8) throw DimensionError("opt/hyper must hold 8 values");
  auto unpack = [&](std::size_t i) {
    return std::bit_cast<double>(
        std::array<float, 2>{hyper.values[2 * i], hyper.values[2 * i + 1]});
  };
  options_.lr = unpack(0);
  options_.rho = unpack(1);
  options_.eps = unpack(2);
  steps_ = static_cast<std::size_t>(unpack(3));
}

template class Adadelta<float>;
template class Adadelta<double>;

StepLrSchedule::StepLrSchedule(double initial_lr, double gamma, std::size_t step_every)
    : initial_lr_(initial_lr),
      gamma_(gamma),
      step_every_(step_every),
      current_lr_(initial_lr) {
  if (step_every == 0) throw ParameterError("step_every must be >= 1");
  if (!(gamma > 0.0)) throw ParameterError("gamma must be > 0");
}

double StepLrSchedule::epoch_end() {
  ++epochs_;
  if (epochs_ % step_every_ == 0) current_lr_ *= gamma_;
  return current_lr_;
}

}  // namespace lqiq

#ifndef LQIQ_OPS_HPP_
#define LQIQ_OPS_HPP_

#include <cstddef>
#include <cstdint>
#include <span>

#include "lqiq/rng.hpp"
#include "lqiq/tensor.hpp"

// Differentiable operations over lqiq::Tensor. Every op checks shapes and
// throws DimensionError naming the offending shapes; nothing broadcasts
// implicitly. The two row-broadcasting ops (add_bias, repeat_rows) say so in
// their names.
namespace lqiq {

// [r x k] * [k x c] -> [r x c].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Fully connected layer: x [b x in], weight [out x in], bias [out] -> [b x out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// 2-D cross-correlation (the kernel is not flipped).
// input [b x c_in x h x w], kernel [c_out x c_in x k x k] ->
// [b x c_out x h' x w'] with h' = (h + 2*padding - k) / stride + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                 Conv2dOptions options = {});
// Same, plus a per-output-channel bias [c_out].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, Conv2dOptions options = {});

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

// Max over k x k windows of a [b x c x h x w] tensor. stride 0 means stride k.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t kernel,
                     std::size_t stride = 0);

// Row-wise log-softmax of a [b x c] tensor.
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x);

// Inverted dropout. In training mode each entry is zeroed with probability
// p and survivors are scaled by 1/(1-p); otherwise identity. `rng` may be
// null only when the op is an identity (eval mode or p == 0).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng* rng);

// [b x ...] -> [b x prod(...)].
template <typename T>
Tensor<T> flatten(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> elementwise_mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

// Full reductions to a rank-0 tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

// x [r x c] + bias [c] added to every row.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

// x [r x c] -> [r*times x c]; row i is copied to rows i*times .. i*times+times-1.
template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& x, std::size_t times);

// x [r x c], column index per row -> [r] with out[i] = x[i, columns[i]].
template <typename T>
Tensor<T> pick(const Tensor<T>& x, std::span<const std::int64_t> columns);

}  // namespace lqiq

#endif  // LQIQ_OPS_HPP_

#include "lqiq/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "lqiq/errors.hpp"

namespace lqiq {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const Mat<T>>;
template <typename T>
using MapVec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstMapVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
ConstMapMat<T> as_matrix(const Buffer<T>& v, std::size_t rows,
                         std::size_t cols) {
  return ConstMapMat<T>(v.data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
}

template <typename T>
MapMat<T> as_matrix(Buffer<T>& v, std::size_t rows, std::size_t cols) {
  return MapMat<T>(v.data(), static_cast<Eigen::Index>(rows),
                   static_cast<Eigen::Index>(cols));
}

template <typename T>
ConstMapVec<T> as_vector(const Buffer<T>& v) {
  return ConstMapVec<T>(v.data(), static_cast<Eigen::Index>(v.size()));
}

template <typename T>
MapVec<T> as_vector(Buffer<T>& v) {
  return MapVec<T>(v.data(), static_cast<Eigen::Index>(v.size()));
}

template <typename T>
void require_rank(const Tensor<T>& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + " input, got shape " +
                         shape_string(x.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                        const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

template <typename T>
detail::Node<T>& parent(detail::Node<T>& node, std::size_t i) {
  return *node.parents[i];
}

// Unfolds one image [c x h x w] into columns [c*k*k x oh*ow].
template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t height,
            std::size_t width, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t out_h, std::size_t out_w, T* cols) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        T* row = cols + ((c * k + ki) * k + kj) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                                    static_cast<std::ptrdiff_t>(pad);
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * stride + kj) -
                static_cast<std::ptrdiff_t>(pad);
            const bool inside = iy >= 0 && ix >= 0 &&
                                iy < static_cast<std::ptrdiff_t>(height) &&
                                ix < static_cast<std::ptrdiff_t>(width);
            row[oy * out_w + ox] =
                inside ? image[(c * height + static_cast<std::size_t>(iy)) *
                                   width +
                               static_cast<std::size_t>(ix)]
                       : T{0};
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters column gradients back onto the image.
template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t height,
            std::size_t width, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t out_h, std::size_t out_w, T* image) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const T* row = cols + ((c * k + ki) * k + kj) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * stride + kj) -
                static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) continue;
            image[(c * height + static_cast<std::size_t>(iy)) * width +
                  static_cast<std::size_t>(ix)] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> conv2d_impl(const Tensor<T>& input, const Tensor<T>& kernel,
                      const Tensor<T>* bias, Conv2dOptions options) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  const std::size_t batch = input.dim(0), c_in = input.dim(1),
                    h = input.dim(2), w = input.dim(3);
  const std::size_t c_out = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != c_in || kernel.dim(3) != k) {
    throw DimensionError("conv2d: kernel " + shape_string(kernel.shape()) +
                         " incompatible with input " +
                         shape_string(input.shape()));
  }
  if (options.stride == 0) throw ParameterError("conv2d: stride must be >= 1");
  const std::size_t padded_h = h + 2 * options.padding;
  const std::size_t padded_w = w + 2 * options.padding;
  if (k == 0 || k > padded_h || k > padded_w) {
    throw DimensionError("conv2d: kernel " + shape_string(kernel.shape()) +
                         " larger than input " + shape_string(input.shape()));
  }
  if (bias != nullptr && bias->shape() != Shape{c_out}) {
    throw DimensionError("conv2d: bias " + shape_string(bias->shape()) +
                         " does not match " + std::to_string(c_out) +
                         " output channels");
  }
  const std::size_t out_h = (padded_h - k) / options.stride + 1;
  const std::size_t out_w = (padded_w - k) / options.stride + 1;
  const std::size_t patch = c_in * k * k;
  const std::size_t plane = out_h * out_w;
  const std::size_t in_image = c_in * h * w;
  const std::size_t out_image = c_out * plane;

  auto cols = std::make_shared<Buffer<T>>(batch * patch * plane);
  Buffer<T> out(batch * out_image);
  const auto& in_values = input.node()->value;
  const auto& k_values = kernel.node()->value;
  const auto weights = as_matrix(k_values, c_out, patch);
  for (std::size_t b = 0; b < batch; ++b) {
    T* col = cols->data() + b * patch * plane;
    im2col(in_values.data() + b * in_image, c_in, h, w, k, options.stride,
           options.padding, out_h, out_w, col);
    ConstMapMat<T> col_mat(col, static_cast<Eigen::Index>(patch),
                           static_cast<Eigen::Index>(plane));
    MapMat<T> out_mat(out.data() + b * out_image,
                      static_cast<Eigen::Index>(c_out),
                      static_cast<Eigen::Index>(plane));
    out_mat.noalias() = weights * col_mat;
    if (bias != nullptr) {
      out_mat.colwise() += as_vector(bias->node()->value);
    }
  }

  std::vector<Tensor<T>> parents{input, kernel};
  if (bias != nullptr) parents.push_back(*bias);
  const bool has_bias = bias != nullptr;
  return Tensor<T>::from_op(
      {batch, c_out, out_h, out_w}, std::move(out), std::move(parents),
      [=](detail::Node<T>& self) {
        auto& in_node = parent(self, 0);
        auto& k_node = parent(self, 1);
        const auto w_mat = as_matrix(k_node.value, c_out, patch);
        Buffer<T> d_cols(patch * plane);
        for (std::size_t b = 0; b < batch; ++b) {
          ConstMapMat<T> d_out(self.grad.data() + b * out_image,
                               static_cast<Eigen::Index>(c_out),
                               static_cast<Eigen::Index>(plane));
          if (k_node.requires_grad) {
            ConstMapMat<T> col_mat(cols->data() + b * patch * plane,
                                   static_cast<Eigen::Index>(patch),
                                   static_cast<Eigen::Index>(plane));
            as_matrix(k_node.ensure_grad(), c_out, patch).noalias() +=
                d_out * col_mat.transpose();
          }
          if (has_bias && parent(self, 2).requires_grad) {
            as_vector(parent(self, 2).ensure_grad()) += d_out.rowwise().sum();
          }
          if (in_node.requires_grad) {
            MapMat<T> d_col_mat(d_cols.data(), static_cast<Eigen::Index>(patch),
                                static_cast<Eigen::Index>(plane));
            d_col_mat.noalias() = w_mat.transpose() * d_out;
            col2im(d_cols.data(), c_in, h, w, k, options.stride,
                   options.padding, out_h, out_w,
                   in_node.ensure_grad().data() + b * in_image);
          }
        }
      });
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) +
                         " by " + shape_string(b.shape()));
  }
  const std::size_t rows = a.dim(0), inner = a.dim(1), cols = b.dim(1);
  Buffer<T> out(rows * cols);
  as_matrix(out, rows, cols).noalias() =
      as_matrix(a.node()->value, rows, inner) *
      as_matrix(b.node()->value, inner, cols);
  return Tensor<T>::from_op(
      {rows, cols}, std::move(out), {a, b}, [=](detail::Node<T>& self) {
        auto& a_node = parent(self, 0);
        auto& b_node = parent(self, 1);
        const auto d_out = as_matrix(self.grad, rows, cols);
        if (a_node.requires_grad) {
          as_matrix(a_node.ensure_grad(), rows, inner).noalias() +=
              d_out * as_matrix(b_node.value, inner, cols).transpose();
        }
        if (b_node.requires_grad) {
          as_matrix(b_node.ensure_grad(), inner, cols).noalias() +=
              as_matrix(a_node.value, rows, inner).transpose() * d_out;
        }
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || weight.dim(1) != x.dim(1) ||
      bias.shape() != Shape{weight.dim(0)}) {
    throw DimensionError("linear: input " + shape_string(x.shape()) +
                         ", weight " + shape_string(weight.shape()) +
                         ", bias " + shape_string(bias.shape()));
  }
  const std::size_t rows = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  Buffer<T> out(rows * out_dim);
  auto out_mat = as_matrix(out, rows, out_dim);
  out_mat.noalias() = as_matrix(x.node()->value, rows, in) *
                      as_matrix(weight.node()->value, out_dim, in).transpose();
  out_mat.rowwise() += as_vector(bias.node()->value).transpose();
  return Tensor<T>::from_op(
      {rows, out_dim}, std::move(out), {x, weight, bias},
      [=](detail::Node<T>& self) {
        auto& x_node = parent(self, 0);
        auto& w_node = parent(self, 1);
        auto& b_node = parent(self, 2);
        const auto d_out = as_matrix(self.grad, rows, out_dim);
        if (x_node.requires_grad) {
          as_matrix(x_node.ensure_grad(), rows, in).noalias() +=
              d_out * as_matrix(w_node.value, out_dim, in);
        }
        if (w_node.requires_grad) {
          as_matrix(w_node.ensure_grad(), out_dim, in).noalias() +=
              d_out.transpose() * as_matrix(x_node.value, rows, in);
        }
        if (b_node.requires_grad) {
          as_vector(b_node.ensure_grad()) += d_out.colwise().sum().transpose();
        }
      });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                 Conv2dOptions options) {
  return conv2d_impl<T>(input, kernel, nullptr, options);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, Conv2dOptions options) {
  return conv2d_impl<T>(input, kernel, &bias, options);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Buffer<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > T{0} ? v : T{0};
  return Tensor<T>::from_op(x.shape(), std::move(out), {x},
                            [](detail::Node<T>& self) {
                              auto& in = parent(self, 0);
                              auto& g = in.ensure_grad();
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                if (in.value[i] > T{0}) g[i] += self.grad[i];
                              }
                            });
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t kernel,
                     std::size_t stride) {
  require_rank(x, 4, "max_pool2d");
  if (kernel == 0) throw ParameterError("max_pool2d: kernel must be >= 1");
  if (stride == 0) stride = kernel;
  const std::size_t batch = x.dim(0), channels = x.dim(1), h = x.dim(2),
                    w = x.dim(3);
  if (kernel > h || kernel > w) {
    throw DimensionError("max_pool2d: window " + std::to_string(kernel) +
                         " larger than input " + shape_string(x.shape()));
  }
  const std::size_t out_h = (h - kernel) / stride + 1;
  const std::size_t out_w = (w - kernel) / stride + 1;
  const std::size_t planes = batch * channels;
  Buffer<T> out(planes * out_h * out_w);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto& in = x.node()->value;
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        std::size_t best = base + (oy * stride) * w + ox * stride;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::size_t idx =
                base + (oy * stride + ky) * w + ox * stride + kx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (p * out_h + oy) * out_w + ox;
        out[o] = in[best];
        (*argmax)[o] = best;
      }
    }
  }
  return Tensor<T>::from_op({batch, channels, out_h, out_w}, std::move(out),
                            {x}, [argmax](detail::Node<T>& self) {
                              auto& g = parent(self, 0).ensure_grad();
                              for (std::size_t o = 0; o < self.grad.size();
                                   ++o) {
                                g[(*argmax)[o]] += self.grad[o];
                              }
                            });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  require_rank(x, 2, "log_softmax");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (cols == 0) throw DimensionError("log_softmax: zero classes");
  Buffer<T> out(rows * cols);
  const auto& in = x.node()->value;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * cols;
    const T peak = *std::max_element(row, row + cols);
    T total{0};
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(row[c] - peak);
    const T log_norm = peak + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = row[c] - log_norm;
  }
  return Tensor<T>::from_op(
      {rows, cols}, out, {x}, [rows, cols](detail::Node<T>& self) {
        auto& g = parent(self, 0).ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          T grad_sum{0};
          for (std::size_t c = 0; c < cols; ++c) grad_sum += self.grad[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            g[i] += self.grad[i] - std::exp(self.value[i]) * grad_sum;
          }
        }
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng* rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ParameterError("dropout: rate must lie in [0, 1), got " +
                         std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  if (rng == nullptr) {
    throw ContractError("dropout: training mode with p > 0 needs an Rng");
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<Buffer<T>>(x.numel());
  Buffer<T> out(x.numel());
  const auto& in = x.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng->uniform() < p ? T{0} : keep_scale;
    out[i] = in[i] * (*mask)[i];
  }
  return Tensor<T>::from_op(x.shape(), std::move(out), {x},
                            [mask](detail::Node<T>& self) {
                              auto& g = parent(self, 0).ensure_grad();
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                g[i] += self.grad[i] * (*mask)[i];
                              }
                            });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) +
                         " as " + shape_string(shape));
  }
  Buffer<T> out(x.data().begin(), x.data().end());
  return Tensor<T>::from_op(std::move(shape), std::move(out), {x},
                            [](detail::Node<T>& self) {
                              as_vector(parent(self, 0).ensure_grad()) +=
                                  as_vector(self.grad);
                            });
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  if (x.rank() < 1) throw DimensionError("flatten: rank-0 input");
  const std::size_t batch = x.dim(0);
  return reshape(x, {batch, batch == 0 ? 0 : x.numel() / batch});
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Buffer<T> out(a.numel());
  as_vector(out) = as_vector(a.node()->value) + as_vector(b.node()->value);
  return Tensor<T>::from_op(a.shape(), std::move(out), {a, b},
                            [](detail::Node<T>& self) {
                              for (std::size_t i = 0; i < 2; ++i) {
                                if (!parent(self, i).requires_grad) continue;
                                as_vector(parent(self, i).ensure_grad()) +=
                                    as_vector(self.grad);
                              }
                            });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  Buffer<T> out(a.numel());
  as_vector(out) = as_vector(a.node()->value) - as_vector(b.node()->value);
  return Tensor<T>::from_op(a.shape(), std::move(out), {a, b},
                            [](detail::Node<T>& self) {
                              if (parent(self, 0).requires_grad) {
                                as_vector(parent(self, 0).ensure_grad()) +=
                                    as_vector(self.grad);
                              }
                              if (parent(self, 1).requires_grad) {
                                as_vector(parent(self, 1).ensure_grad()) -=
                                    as_vector(self.grad);
                              }
                            });
}

template <typename T>
Tensor<T> elementwise_mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "elementwise_mul");
  Buffer<T> out(a.numel());
  as_vector(out) =
      as_vector(a.node()->value).cwiseProduct(as_vector(b.node()->value));
  return Tensor<T>::from_op(
      a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
        auto& a_node = parent(self, 0);
        auto& b_node = parent(self, 1);
        if (a_node.requires_grad) {
          as_vector(a_node.ensure_grad()) +=
              as_vector(self.grad).cwiseProduct(as_vector(b_node.value));
        }
        if (b_node.requires_grad) {
          as_vector(b_node.ensure_grad()) +=
              as_vector(self.grad).cwiseProduct(as_vector(a_node.value));
        }
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Buffer<T> out(x.numel());
  as_vector(out) = as_vector(x.node()->value) * factor;
  return Tensor<T>::from_op(x.shape(), std::move(out), {x},
                            [factor](detail::Node<T>& self) {
                              as_vector(parent(self, 0).ensure_grad()) +=
                                  as_vector(self.grad) * factor;
                            });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total{0};
  for (const T v : x.data()) total += v;
  return Tensor<T>::from_op({}, {total}, {x}, [](detail::Node<T>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), static_cast<T>(1.0 / static_cast<double>(x.numel())));
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank(x, 2, "add_bias");
  if (bias.shape() != Shape{x.dim(1)}) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) +
                         " does not match rows of " + shape_string(x.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Buffer<T> out(x.data().begin(), x.data().end());
  as_matrix(out, rows, cols).rowwise() +=
      as_vector(bias.node()->value).transpose();
  return Tensor<T>::from_op(
      x.shape(), std::move(out), {x, bias}, [rows, cols](detail::Node<T>& self) {
        if (parent(self, 0).requires_grad) {
          as_vector(parent(self, 0).ensure_grad()) += as_vector(self.grad);
        }
        if (parent(self, 1).requires_grad) {
          as_vector(parent(self, 1).ensure_grad()) +=
              as_matrix(self.grad, rows, cols).colwise().sum().transpose();
        }
      });
}

template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& x, std::size_t times) {
  require_rank(x, 2, "repeat_rows");
  if (times == 0) throw ParameterError("repeat_rows: times must be >= 1");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Buffer<T> out(rows * times * cols);
  const auto& in = x.node()->value;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < times; ++t) {
      std::copy_n(in.data() + r * cols, cols,
                  out.data() + (r * times + t) * cols);
    }
  }
  return Tensor<T>::from_op(
      {rows * times, cols}, std::move(out), {x},
      [rows, cols, times](detail::Node<T>& self) {
        auto& g = parent(self, 0).ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t t = 0; t < times; ++t) {
            const T* src = self.grad.data() + (r * times + t) * cols;
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += src[c];
          }
        }
      });
}

template <typename T>
Tensor<T> pick(const Tensor<T>& x, std::span<const std::int64_t> columns) {
  require_rank(x, 2, "pick");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (columns.size() != rows) {
    throw DimensionError("pick: " + std::to_string(columns.size()) +
                         " indices for " + shape_string(x.shape()));
  }
  auto index = std::make_shared<std::vector<std::size_t>>(rows);
  Buffer<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (columns[r] < 0 || static_cast<std::size_t>(columns[r]) >= cols) {
      throw ContractError("pick: column " + std::to_string(columns[r]) +
                          " out of range for " + std::to_string(cols) +
                          " columns");
    }
    (*index)[r] = r * cols + static_cast<std::size_t>(columns[r]);
    out[r] = x.data()[(*index)[r]];
  }
  return Tensor<T>::from_op({rows}, std::move(out), {x},
                            [index](detail::Node<T>& self) {
                              auto& g = parent(self, 0).ensure_grad();
                              for (std::size_t r = 0; r < index->size(); ++r) {
                                g[(*index)[r]] += self.grad[r];
                              }
                            });
}

#define LQIQ_INSTANTIATE_OPS(T)                                               \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&,               \
                            const Tensor<T>&);                                \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&,               \
                            Conv2dOptions);                                   \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&,               \
                            const Tensor<T>&, Conv2dOptions);                 \
  template Tensor<T> relu(const Tensor<T>&);                                  \
  template Tensor<T> max_pool2d(const Tensor<T>&, std::size_t, std::size_t);  \
  template Tensor<T> log_softmax(const Tensor<T>&);                           \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, Rng*);           \
  template Tensor<T> flatten(const Tensor<T>&);                               \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> elementwise_mul(const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> scale(const Tensor<T>&, T);                              \
  template Tensor<T> sum(const Tensor<T>&);                                   \
  template Tensor<T> mean(const Tensor<T>&);                                  \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> repeat_rows(const Tensor<T>&, std::size_t);              \
  template Tensor<T> pick(const Tensor<T>&, std::span<const std::int64_t>);

LQIQ_INSTANTIATE_OPS(float)
LQIQ_INSTANTIATE_OPS(double)

#undef LQIQ_INSTANTIATE_OPS

}  // namespace lqiq

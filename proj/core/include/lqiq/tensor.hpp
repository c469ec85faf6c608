#ifndef LQIQ_TENSOR_HPP_
#define LQIQ_TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace lqiq {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Every tensor buffer starts on a 64-byte boundary. Eigen picks its
// vectorized peeling from the pointer alignment, so fixed alignment keeps
// results bit-identical from run to run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlignment));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

namespace detail {

// One vertex of the reverse-mode graph. A leaf has no parents and no
// backward function; an op result owns its inputs through `parents` and a
// closure that reads `grad` and accumulates into the parents' grads.
template <typename T>
struct Node {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
  Buffer<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T{0});
    return grad;
  }
};

}  // namespace detail

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled();

 private:
  bool previous_;
};

// Dense row-major array with optional gradient tracking.
//
// Tensor is a handle: copies share storage and graph position, like a
// framework tensor. Use clone() for an independent deep copy and detach()
// to cut the graph while keeping a private copy of the values.
//
// Gradients accumulate. backward() adds into the grad buffers of every
// reachable leaf that requires grad; call zero_grad() between steps.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor();
  Tensor(Shape shape, Buffer<T> values, bool requires_grad = false);
  Tensor(Shape shape, const std::vector<T>& values, bool requires_grad = false);
  Tensor(Shape shape, std::initializer_list<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  // Builds the result of a differentiable op. `backward` is attached only when
  // recording is enabled and at least one parent requires grad.
  static Tensor from_op(Shape shape, Buffer<T> values,
                        std::vector<Tensor> parents,
                        std::function<void(detail::Node<T>&)> backward);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  T item() const;
  T at(std::size_t flat_index) const { return node_->value.at(flat_index); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  // Reverse pass from a one-element tensor.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  const NodePtr& node() const { return node_; }

 private:
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

// Detached copy with values converted to another precision.
template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& x) {
  if constexpr (std::is_same_v<To, From>) {
    return x.detach();
  } else {
    return Tensor<To>(x.shape(), Buffer<To>(x.data().begin(), x.data().end()));
  }
}

}  // namespace lqiq

#endif  // LQIQ_TENSOR_HPP_

#include "lqiq/models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lqiq/errors.hpp"
#include "lqiq/ops.hpp"

namespace lqiq {

namespace {

constexpr std::size_t kConv1Channels = 32;
constexpr std::size_t kConv2Channels = 64;
constexpr std::size_t kKernel = 3;
constexpr std::size_t kPool = 2;

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(values), true);
}

template <typename T>
void append(std::vector<NamedTensor<T>>& out, std::vector<NamedTensor<T>> more) {
  for (auto& p : more) out.push_back(std::move(p));
}

}  // namespace

ModelSpec ModelSpec::for_dataset(DatasetKind kind, bool dropout_enabled) {
  ModelSpec spec;
  spec.dropout_enabled = dropout_enabled;
  switch (kind) {
    case DatasetKind::kMnist:
      break;
    case DatasetKind::kCifar10:
      spec.in_channels = 3;
      spec.height = spec.width = 32;
      break;
    case DatasetKind::kCifar100:
      spec.in_channels = 3;
      spec.height = spec.width = 32;
      spec.num_classes = 100;
      break;
  }
  return spec;
}

nlohmann::json to_json(const ModelSpec& spec) {
  return {{"in_channels", spec.in_channels},
          {"height", spec.height},
          {"width", spec.width},
          {"num_classes", spec.num_classes},
          {"dropout_enabled", spec.dropout_enabled},
          {"feature_width", spec.feature_width},
          {"n_basis", spec.n_basis}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  spec.in_channels = j.at("in_channels").get<std::size_t>();
  spec.height = j.at("height").get<std::size_t>();
  spec.width = j.at("width").get<std::size_t>();
  spec.num_classes = j.at("num_classes").get<std::size_t>();
  spec.dropout_enabled = j.at("dropout_enabled").get<bool>();
  spec.feature_width = j.at("feature_width").get<std::size_t>();
  spec.n_basis = j.at("n_basis").get<std::size_t>();
  return spec;
}

void throw_architecture_mismatch(const std::string& from, const std::string& to) {
  throw ContractError("transfer_weights: architecture mismatch between " + from +
                      " and " + to);
}

template <typename T>
Linear<T> Linear<T>::init(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear layer;
  layer.weight = uniform_tensor<T>({out, in}, bound, rng);
  layer.bias = uniform_tensor<T>({out}, bound, rng);
  return layer;
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  return linear(x, weight, bias);
}

template <typename T>
Conv2d<T> Conv2d<T>::init(std::size_t in, std::size_t out, std::size_t k,
                          Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
  Conv2d layer;
  layer.weight = uniform_tensor<T>({out, in, k, k}, bound, rng);
  layer.bias = uniform_tensor<T>({out}, bound, rng);
  return layer;
}

template <typename T>
Tensor<T> Conv2d<T>::operator()(const Tensor<T>& x) const {
  return conv2d(x, weight, bias);
}

template <typename T>
Backbone<T>::Backbone(const ModelSpec& spec, Rng& init_rng) : spec_(spec) {
  if (spec.height < 2 * kKernel || spec.width < 2 * kKernel) {
    throw DimensionError("backbone needs inputs of at least 6x6, got " +
                         std::to_string(spec.height) + "x" +
                         std::to_string(spec.width));
  }
  const std::size_t pooled_h = (spec.height - 2 * (kKernel - 1)) / kPool;
  const std::size_t pooled_w = (spec.width - 2 * (kKernel - 1)) / kPool;
  flat_width_ = kConv2Channels * pooled_h * pooled_w;
  conv1_ = Conv2d<T>::init(spec.in_channels, kConv1Channels, kKernel, init_rng);
  conv2_ = Conv2d<T>::init(kConv1Channels, kConv2Channels, kKernel, init_rng);
  fc1_ = Linear<T>::init(flat_width_, spec.feature_width, init_rng);
}

template <typename T>
void Backbone<T>::check_input(const Tensor<T>& images) const {
  if (images.rank() != 4 || images.dim(1) != spec_.in_channels ||
      images.dim(2) != spec_.height || images.dim(3) != spec_.width) {
    throw DimensionError("backbone expects [b x " +
                         std::to_string(spec_.in_channels) + " x " +
                         std::to_string(spec_.height) + " x " +
                         std::to_string(spec_.width) + "] images, got " +
                         shape_string(images.shape()));
  }
}

template <typename T>
Tensor<T> Backbone<T>::forward(const Tensor<T>& images, bool training,
                               Rng* rng) const {
  check_input(images);
  auto x = relu(conv1_(images));
  x = relu(conv2_(x));
  x = max_pool2d(x, kPool);
  x = dropout(x, conv_dropout(), training, rng);
  x = flatten(x);
  x = relu(fc1_(x));
  return dropout(x, fc_dropout(), training, rng);
}

template <typename T>
std::vector<NamedTensor<T>> Backbone<T>::parameters(const std::string& prefix) const {
  return {{prefix + "conv1.weight", conv1_.weight}, {prefix + "conv1.bias", conv1_.bias},
          {prefix + "conv2.weight", conv2_.weight}, {prefix + "conv2.bias", conv2_.bias},
          {prefix + "fc1.weight", fc1_.weight},     {prefix + "fc1.bias", fc1_.bias}};
}

template <typename T>
std::size_t Backbone<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters("")) n += p.tensor.numel();
  return n;
}

template <typename T>
void Backbone<T>::copy_from(const Backbone& other) {
  auto mine = parameters("");
  const auto theirs = other.parameters("");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i].tensor.shape() != theirs[i].tensor.shape()) {
      throw_architecture_mismatch(
          theirs[i].name + shape_string(theirs[i].tensor.shape()),
          mine[i].name + shape_string(mine[i].tensor.shape()));
    }
    const auto src = theirs[i].tensor.data();
    std::copy(src.begin(), src.end(), mine[i].tensor.mutable_data().begin());
  }
}

template <typename T>
void Backbone<T>::set_trainable(bool trainable) {
  for (auto& p : parameters("")) p.tensor.set_requires_grad(trainable);
}

template <typename T>
Classifier<T>::Classifier(const ModelSpec& spec, Rng& init_rng)
    : backbone_(spec, init_rng),
      fc2_(Linear<T>::init(spec.feature_width, spec.num_classes, init_rng)) {}

template <typename T>
Tensor<T> Classifier<T>::forward(const Tensor<T>& images, bool training,
                                 Rng* rng) const {
  return log_softmax(fc2_(backbone_.forward(images, training, rng)));
}

template <typename T>
std::vector<NamedTensor<T>> Classifier<T>::parameters() const {
  auto out = backbone_.parameters("backbone.");
  out.push_back({"fc2.weight", fc2_.weight});
  out.push_back({"fc2.bias", fc2_.bias});
  return out;
}

template <typename T>
IqnModel<T>::IqnModel(const ModelSpec& spec, Rng& init_rng)
    : backbone_(spec, init_rng),
      tau_embedding_(Linear<T>::init(spec.n_basis, spec.feature_width, init_rng)),
      head_(Linear<T>::init(spec.feature_width, 1, init_rng)) {}

template <typename T>
Tensor<T> IqnModel<T>::embed_taus(std::span<const T> taus) const {
  const std::size_t n_basis = spec().n_basis;
  std::vector<T> basis(taus.size() * n_basis);
  for (std::size_t r = 0; r < taus.size(); ++r) {
    const T tau = taus[r];
    if (!(tau >= T{0} && tau <= T{1})) {
      throw ParameterError("tau " + std::to_string(static_cast<double>(tau)) +
                           " outside [0, 1]");
    }
    for (std::size_t i = 0; i < n_basis; ++i) {
      basis[r * n_basis + i] = static_cast<T>(
          std::cos(std::numbers::pi * static_cast<double>(i) *
                   static_cast<double>(tau)));
    }
  }
  return relu(tau_embedding_(Tensor<T>({taus.size(), n_basis}, std::move(basis))));
}

template <typename T>
Tensor<T> IqnModel<T>::quantiles(const Tensor<T>& features,
                                 const Tensor<T>& taus) const {
  if (taus.rank() != 2 || features.rank() != 2 ||
      taus.dim(0) != features.dim(0)) {
    throw DimensionError("iqn: taus " + shape_string(taus.shape()) +
                         " do not match features " +
                         shape_string(features.shape()));
  }
  const std::size_t batch = taus.dim(0), k = taus.dim(1);
  const auto phi = embed_taus(taus.data());
  const auto fused = elementwise_mul(repeat_rows(features, k), phi);
  return reshape(head_(fused), {batch, k});
}

template <typename T>
Tensor<T> IqnModel<T>::forward(const Tensor<T>& images, const Tensor<T>& taus,
                               bool training, Rng* rng) const {
  if (taus.rank() != 2 || images.rank() < 1 || taus.dim(0) != images.dim(0)) {
    throw DimensionError("iqn: taus " + shape_string(taus.shape()) +
                         " do not match images " + shape_string(images.shape()));
  }
  return quantiles(backbone_.forward(images, training, rng), taus);
}

template <typename T>
std::vector<NamedTensor<T>> IqnModel<T>::head_parameters() const {
  return {{"tau_embedding.weight", tau_embedding_.weight},
          {"tau_embedding.bias", tau_embedding_.bias},
          {"head.weight", head_.weight},
          {"head.bias", head_.bias}};
}

template <typename T>
std::vector<NamedTensor<T>> IqnModel<T>::parameters() const {
  auto out = backbone_.parameters("backbone.");
  append(out, head_parameters());
  return out;
}

template <typename T>
ScalarModel<T>::ScalarModel(const ModelSpec& spec, Rng& init_rng)
    : backbone_(spec, init_rng),
      head_(Linear<T>::init(spec.feature_width, 1, init_rng)) {}

template <typename T>
Tensor<T> ScalarModel<T>::forward(const Tensor<T>& images, bool training,
                                  Rng* rng) const {
  return head_(backbone_.forward(images, training, rng));
}

template <typename T>
std::vector<NamedTensor<T>> ScalarModel<T>::head_parameters() const {
  return {{"head.weight", head_.weight}, {"head.bias", head_.bias}};
}

template <typename T>
std::vector<NamedTensor<T>> ScalarModel<T>::parameters() const {
  auto out = backbone_.parameters("backbone.");
  append(out, head_parameters());
  return out;
}

template <typename T>
std::vector<std::int64_t> predict_labels(const Classifier<T>& classifier,
                                         const LabeledDataset& dataset,
                                         std::size_t batch_size) {
  NoGradGuard no_grad;
  std::vector<std::int64_t> out;
  out.reserve(dataset.size());
  BatchIterator batches(dataset, batch_size, 0, false, false);
  batches.start_epoch();
  while (auto batch = batches.next()) {
    Tensor<T> images;
    if constexpr (std::is_same_v<T, float>) {
      images = batch->images;
    } else {
      images = Tensor<T>(batch->images.shape(),
                         std::vector<T>(batch->images.data().begin(),
                                        batch->images.data().end()));
    }
    const auto log_probs = classifier.forward(images, false);
    const std::size_t classes = log_probs.dim(1);
    const auto values = log_probs.data();
    for (std::size_t r = 0; r < log_probs.dim(0); ++r) {
      const auto row = values.subspan(r * classes, classes);
      out.push_back(std::max_element(row.begin(), row.end()) - row.begin());
    }
  }
  return out;
}

template <typename T>
std::vector<NamedArray> to_arrays(const std::vector<NamedTensor<T>>& params) {
  std::vector<NamedArray> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    NamedArray a;
    a.name = p.name;
    for (auto d : p.tensor.shape()) a.dims.push_back(static_cast<std::uint32_t>(d));
    a.values.assign(p.tensor.data().begin(), p.tensor.data().end());
    out.push_back(std::move(a));
  }
  return out;
}

template <typename T>
void assign_from_arrays(const std::vector<NamedTensor<T>>& params,
                        std::span<const NamedArray> arrays) {
  for (const auto& p : params) {
    const auto& a = find_array(arrays, p.name);
    Shape shape(a.dims.begin(), a.dims.end());
    if (shape != p.tensor.shape()) {
      throw DimensionError("parameter " + p.name + " has shape " +
                           shape_string(p.tensor.shape()) +
                           " but checkpoint holds " + shape_string(shape));
    }
    auto dst = Tensor<T>(p.tensor).mutable_data();
    std::transform(a.values.begin(), a.values.end(), dst.begin(),
                   [](float v) { return static_cast<T>(v); });
  }
}

#define LQIQ_INSTANTIATE_MODELS(T)                                             \
  template struct Linear<T>;                                                   \
  template struct Conv2d<T>;                                                   \
  template class Backbone<T>;                                                  \
  template class Classifier<T>;                                                \
  template class IqnModel<T>;                                                  \
  template class ScalarModel<T>;                                               \
  template std::vector<std::int64_t> predict_labels(                           \
      const Classifier<T>&, const LabeledDataset&, std::size_t);               \
  template std::vector<NamedArray> to_arrays(const std::vector<NamedTensor<T>>&); \
  template void assign_from_arrays(const std::vector<NamedTensor<T>>&,         \
                                   std::span<const NamedArray>);

LQIQ_INSTANTIATE_MODELS(float)
LQIQ_INSTANTIATE_MODELS(double)

#undef LQIQ_INSTANTIATE_MODELS

}  // namespace lqiq

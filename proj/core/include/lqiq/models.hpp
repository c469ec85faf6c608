#ifndef LQIQ_MODELS_HPP_
#define LQIQ_MODELS_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lqiq/checkpoint.hpp"
#include "lqiq/data.hpp"
#include "lqiq/rng.hpp"
#include "lqiq/tensor.hpp"

namespace lqiq {

// Dropout after the conv stack and after fc1 when dropout is enabled.
inline constexpr double kConvDropout = 0.25;
inline constexpr double kFcDropout = 0.50;

struct ModelSpec {
  std::size_t in_channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t num_classes = 10;
  bool dropout_enabled = true;
  std::size_t feature_width = 128;
  std::size_t n_basis = 64;  // cosine features in the tau embedding

  static ModelSpec for_dataset(DatasetKind kind, bool dropout_enabled = true);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

// Weight [out x in] and bias [out], both drawn from U(-1/sqrt(in), 1/sqrt(in)).
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

// Square kernel [out x in x k x k] plus bias, same init rule with
// fan_in = in * k * k.
template <typename T>
struct Conv2d {
  Tensor<T> weight;
  Tensor<T> bias;

  static Conv2d init(std::size_t in, std::size_t out, std::size_t k, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

// conv3x3(c->32) -> relu -> conv3x3(32->64) -> relu -> maxpool2 ->
// dropout(0.25) -> flatten -> fc(->128) -> relu -> dropout(0.5).
template <typename T>
class Backbone {
 public:
  Backbone(const ModelSpec& spec, Rng& init_rng);

  // psi(x): [b x feature_width]. `rng` drives dropout and is required only
  // when training with dropout enabled.
  Tensor<T> forward(const Tensor<T>& images, bool training, Rng* rng) const;

  std::vector<NamedTensor<T>> parameters(const std::string& prefix) const;
  std::size_t parameter_count() const;

  // Value copy of another backbone's parameters into fresh tensors.
  void copy_from(const Backbone& other);
  void set_trainable(bool trainable);

  double conv_dropout() const { return spec_.dropout_enabled ? kConvDropout : 0.0; }
  double fc_dropout() const { return spec_.dropout_enabled ? kFcDropout : 0.0; }
  std::size_t flat_width() const { return flat_width_; }
  const ModelSpec& spec() const { return spec_; }

 private:
  void check_input(const Tensor<T>& images) const;

  ModelSpec spec_;
  std::size_t flat_width_;
  Conv2d<T> conv1_;
  Conv2d<T> conv2_;
  Linear<T> fc1_;
};

// Backbone + fc2 -> log-probabilities.
template <typename T>
class Classifier {
 public:
  Classifier(const ModelSpec& spec, Rng& init_rng);

  Tensor<T> forward(const Tensor<T>& images, bool training, Rng* rng = nullptr) const;

  std::vector<NamedTensor<T>> parameters() const;
  const Backbone<T>& backbone() const { return backbone_; }
  Backbone<T>& backbone() { return backbone_; }
  const ModelSpec& spec() const { return backbone_.spec(); }
  static constexpr const char* kind() { return "classifier"; }

 private:
  Backbone<T> backbone_;
  Linear<T> fc2_;
};

// Implicit quantile network over the classifier's loss.
//
// Z_tau(x) = head( psi(x) * phi(tau) ), with the tau embedding
// phi_j(tau) = relu( sum_{i<n_basis} cos(pi * i * tau) * w_ij + b_j ).
template <typename T>
class IqnModel {
 public:
  IqnModel(const ModelSpec& spec, Rng& init_rng);

  // images [b x ...], taus [b x k] in [0, 1] -> Z [b x k].
  Tensor<T> forward(const Tensor<T>& images, const Tensor<T>& taus,
                    bool training, Rng* rng = nullptr) const;

  // Second half of forward: features [b x width], taus [b x k] -> [b x k].
  Tensor<T> quantiles(const Tensor<T>& features, const Tensor<T>& taus) const;
  // phi(tau) for a flat list of taus: [n x width].
  Tensor<T> embed_taus(std::span<const T> taus) const;

  std::vector<NamedTensor<T>> parameters() const;
  std::vector<NamedTensor<T>> head_parameters() const;
  const Backbone<T>& backbone() const { return backbone_; }
  Backbone<T>& backbone() { return backbone_; }
  const ModelSpec& spec() const { return backbone_.spec(); }
  static constexpr const char* kind() { return "iqn"; }

 private:
  Backbone<T> backbone_;
  Linear<T> tau_embedding_;
  Linear<T> head_;
};

// Backbone + linear head -> one loss estimate per example, [b x 1].
template <typename T>
class ScalarModel {
 public:
  ScalarModel(const ModelSpec& spec, Rng& init_rng);

  Tensor<T> forward(const Tensor<T>& images, bool training, Rng* rng = nullptr) const;

  std::vector<NamedTensor<T>> parameters() const;
  std::vector<NamedTensor<T>> head_parameters() const;
  const Backbone<T>& backbone() const { return backbone_; }
  Backbone<T>& backbone() { return backbone_; }
  const ModelSpec& spec() const { return backbone_.spec(); }
  static constexpr const char* kind() { return "scalar"; }

 private:
  Backbone<T> backbone_;
  Linear<T> head_;
};

[[noreturn]] void throw_architecture_mismatch(const std::string& from,
                                              const std::string& to);

// Copies the trained classifier's backbone into `target`. The target's own
// tau embedding and head are left as initialized.
template <typename T, typename Model>
void transfer_weights(const Classifier<T>& classifier, Model& target) {
  if (classifier.spec().in_channels != target.spec().in_channels ||
      classifier.spec().height != target.spec().height ||
      classifier.spec().width != target.spec().width ||
      classifier.spec().feature_width != target.spec().feature_width) {
    throw_architecture_mismatch(to_json(classifier.spec()).dump(),
                                to_json(target.spec()).dump());
  }
  target.backbone().copy_from(classifier.backbone());
}

// Argmax class per example, eval mode, batched.
template <typename T>
std::vector<std::int64_t> predict_labels(const Classifier<T>& classifier,
                                         const LabeledDataset& dataset,
                                         std::size_t batch_size = 256);

// Parameter (de)serialization. Values are stored as 32-bit floats.
template <typename T>
std::vector<NamedArray> to_arrays(const std::vector<NamedTensor<T>>& params);
// Overwrites each parameter's values in place from the array of the same
// name; shapes must match exactly.
template <typename T>
void assign_from_arrays(const std::vector<NamedTensor<T>>& params,
                        std::span<const NamedArray> arrays);

// Structured description written next to each checkpoint.
template <typename Model>
nlohmann::json model_metadata(const Model& model) {
  nlohmann::json j;
  j["kind"] = Model::kind();
  j["spec"] = to_json(model.spec());
  j["dropout_conv"] = model.backbone().conv_dropout();
  j["dropout_fc"] = model.backbone().fc_dropout();
  j["n_basis"] = model.spec().n_basis;
  auto& params = j["parameters"];
  params = nlohmann::json::array();
  for (const auto& p : model.parameters()) {
    params.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  }
  return j;
}

}  // namespace lqiq

#endif  // LQIQ_MODELS_HPP_

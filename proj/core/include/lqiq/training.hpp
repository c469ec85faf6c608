#ifndef LQIQ_TRAINING_HPP_
#define LQIQ_TRAINING_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lqiq/data.hpp"
#include "lqiq/losses.hpp"
#include "lqiq/models.hpp"
#include "lqiq/optim.hpp"

namespace lqiq {

enum class Precision { kF32, kF64 };
std::string to_string(Precision precision);
Precision parse_precision(const std::string& name);

struct TrainConfig {
  std::size_t epochs = 20;
  // Phase-2 (loss regression) epochs; defaults to `epochs`.
  std::optional<std::size_t> estimator_epochs;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  bool dropout_enabled = true;
  std::size_t n_taus = 64;
  double kappa = 1.0;
  QuantileLossMode loss_mode = QuantileLossMode::kHuber;
  DatasetKind dataset = DatasetKind::kMnist;
  Precision precision = Precision::kF32;
  bool freeze_backbone = false;
  AdadeltaOptions adadelta{};
  double lr_gamma = 0.7;
  std::size_t lr_step_every = 1;

  std::size_t phase2_epochs() const { return estimator_epochs.value_or(epochs); }
  QuantileLossConfig quantile_loss_config() const;
  // Throws ParameterError on epochs == 0, batch_size == 0 and similar.
  void validate() const;
  nlohmann::json to_json() const;
};

struct EpochMetrics {
  std::string phase;  // "classifier", "iqn" or "scalar"
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> accuracy;  // classifier phase only

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

struct RunRecord {
  nlohmann::json config;
  std::vector<EpochMetrics> epochs;
  double wall_clock_seconds = 0.0;
  std::vector<std::string> checkpoint_paths;
  std::string code_version;

  nlohmann::json to_json() const;
};

// Build identifier baked in at configure time (git describe when available).
std::string code_version();

// Sub-stream ids derived from TrainConfig::seed.
enum class RngStream : std::uint64_t {
  kClassifierInit = 1,
  kClassifierShuffle = 2,
  kClassifierDropout = 3,
  kIqnInit = 11,
  kIqnShuffle = 12,
  kIqnDropout = 13,
  kIqnTaus = 14,
  kScalarInit = 21,
  kScalarShuffle = 22,
  kScalarDropout = 23,
  kEstimateTaus = 31,
};
Rng make_rng(std::uint64_t seed, RngStream stream);

// Fresh iid U([0,1]) taus for every training iteration.
class TauSampler {
 public:
  explicit TauSampler(Rng rng) : rng_(std::move(rng)) {}

  template <typename T>
  Tensor<T> sample(std::size_t batch, std::size_t n_taus) {
    std::vector<T> taus(batch * n_taus);
    for (auto& t : taus) t = static_cast<T>(rng_.uniform());
    return Tensor<T>({batch, n_taus}, std::move(taus));
  }

 private:
  Rng rng_;
};

template <typename T>
struct TrainedClassifier {
  Classifier<T> model;
  RunRecord record;
};

template <typename T>
struct TrainedIqn {
  IqnModel<T> model;
  RunRecord record;
};

template <typename T>
struct TrainedScalar {
  ScalarModel<T> model;
  RunRecord record;
};

// Phase 1: cross-entropy training with Adadelta and a per-epoch StepLR decay.
// When `checkpoint` is set the model and optimizer state are written there
// after every epoch. Throws DivergenceError on a non-finite loss.
template <typename T>
TrainedClassifier<T> train_classifier(
    const LabeledDataset& train, const TrainConfig& cfg,
    const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

struct ClassifierEvaluation {
  double mean_loss = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

// Eval-mode mean cross-entropy and accuracy.
template <typename T>
ClassifierEvaluation evaluate_classifier(const Classifier<T>& classifier,
                                         const LabeledDataset& dataset,
                                         std::size_t batch_size = 256);

// Eval-mode per-example cross-entropy, indexed like `dataset`.
template <typename T>
std::vector<float> compute_target_losses(const Classifier<T>& classifier,
                                         const LabeledDataset& dataset,
                                         std::size_t batch_size = 256);

// targets.bin: u32 count, then count little-endian f32 values.
void save_target_losses(const std::filesystem::path& path,
                        std::span<const float> losses);
std::vector<float> load_target_losses(const std::filesystem::path& path);

// Phase 2: transfer the classifier backbone into a fresh IQN and regress the
// cached per-example losses with the quantile loss, n_taus fresh taus per
// example per iteration.
template <typename T>
TrainedIqn<T> train_iqn(
    const Classifier<T>& classifier, const LabeledDataset& train,
    std::span<const float> target_losses, const TrainConfig& cfg,
    const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

// Phase 2 baseline: same transfer, MSE against the same targets.
template <typename T>
TrainedScalar<T> train_scalar(
    const Classifier<T>& classifier, const LabeledDataset& train,
    std::span<const float> target_losses, const TrainConfig& cfg,
    const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

// Checkpoint helpers: parameters (and optimizer state when given) plus a
// JSON metadata file at `path` with extension ".json".
template <typename Model>
void save_model(const Model& model, const std::filesystem::path& path,
                std::span<const NamedArray> extra = {});
// Reads the metadata next to `path`, rebuilds the model and loads values.
template <typename Model>
Model load_model(const std::filesystem::path& path);

// metrics.csv: phase,epoch,lr,loss,accuracy (9 significant digits).
void write_metrics_csv(const std::filesystem::path& path,
                       std::span<const EpochMetrics> rows);

}  // namespace lqiq

#endif  // LQIQ_TRAINING_HPP_

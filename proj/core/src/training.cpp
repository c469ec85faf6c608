#include "lqiq/training.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "lqiq/errors.hpp"
#include "lqiq/ops.hpp"

#ifndef LQIQ_CODE_VERSION
#define LQIQ_CODE_VERSION "unknown"
#endif

namespace lqiq {

namespace {

using Clock = std::chrono::steady_clock;

template <typename T>
Tensor<T> images_as(const Batch& batch) {
  return tensor_cast<T>(batch.images);
}

void check_finite(double loss, const std::string& phase, std::size_t epoch,
                  std::size_t batch_index) {
  if (!std::isfinite(loss)) {
    throw DivergenceError(phase + " training diverged: non-finite loss at epoch " +
                          std::to_string(epoch) + ", batch " +
                          std::to_string(batch_index));
  }
}

template <typename T>
Tensor<T> gather_targets(std::span<const float> targets,
                         const std::vector<std::size_t>& indices) {
  std::vector<T> values;
  values.reserve(indices.size());
  for (auto i : indices) values.push_back(static_cast<T>(targets[i]));
  return Tensor<T>({indices.size()}, std::move(values));
}

struct EpochTotals {
  double loss_sum = 0.0;
  std::size_t examples = 0;
  std::size_t correct = 0;
};

// Shared epoch loop. `batch_step` computes the loss for one batch (adding to
// `correct` if it tracks accuracy); this function runs backward, the
// optimizer, the schedule and the bookkeeping.
template <typename T, typename BatchStep, typename EpochEnd>
void fit(const std::string& phase, const LabeledDataset& data,
         const TrainConfig& cfg, std::size_t epochs, Rng shuffle_rng,
         Adadelta<T>& optimizer, bool track_accuracy, RunRecord& record,
         BatchStep&& batch_step, EpochEnd&& epoch_end) {
  StepLrSchedule schedule(cfg.adadelta.lr, cfg.lr_gamma, cfg.lr_step_every);
  BatchIterator batches(data, cfg.batch_size, shuffle_rng.next_u64());
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    optimizer.set_lr(schedule.current_lr());
    EpochTotals totals;
    batches.start_epoch();
    std::size_t batch_index = 0;
    while (auto batch = batches.next()) {
      optimizer.zero_grad();
      const Tensor<T> loss = batch_step(*batch, totals.correct);
      const double value = static_cast<double>(loss.item());
      check_finite(value, phase, epoch, batch_index);
      loss.backward();
      optimizer.step();
      totals.loss_sum += value * static_cast<double>(batch->labels.size());
      totals.examples += batch->labels.size();
      ++batch_index;
    }
    EpochMetrics m;
    m.phase = phase;
    m.epoch = epoch;
    m.lr = schedule.current_lr();
    m.loss = totals.loss_sum / static_cast<double>(std::max<std::size_t>(totals.examples, 1));
    if (track_accuracy) {
      m.accuracy = static_cast<double>(totals.correct) /
                   static_cast<double>(std::max<std::size_t>(totals.examples, 1));
    }
    record.epochs.push_back(m);
    schedule.epoch_end();
    epoch_end(epoch);
  }
}

template <typename Model, typename T>
std::optional<std::string> checkpoint_after_epoch(
    const Model& model, const Adadelta<T>& opt,
    const std::optional<std::filesystem::path>& path, std::size_t epoch) {
  if (!path) return std::nullopt;
  auto extra = opt.state_arrays();
  extra.push_back({"meta/epoch", {1}, {static_cast<float>(epoch)}});
  save_model(model, *path, extra);
  return path->string();
}

RunRecord start_record(const TrainConfig& cfg) {
  RunRecord record;
  record.config = cfg.to_json();
  record.code_version = code_version();
  return record;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void require_targets(const LabeledDataset& data, std::span<const float> targets) {
  if (targets.size() != data.size()) {
    throw ContractError("target-loss table has " + std::to_string(targets.size()) +
                        " entries for a dataset of " + std::to_string(data.size()));
  }
}

void require_train_split(const LabeledDataset& data) {
  if (data.split != Split::kTrain) {
    throw ContractError("training requires the train split, got " +
                        to_string(data.split));
  }
}

}  // namespace

std::string to_string(Precision precision) {
  return precision == Precision::kF32 ? "f32" : "f64";
}

Precision parse_precision(const std::string& name) {
  if (name == "f32") return Precision::kF32;
  if (name == "f64") return Precision::kF64;
  throw ParameterError("unknown precision \"" + name + "\" (expected f32 or f64)");
}

QuantileLossConfig TrainConfig::quantile_loss_config() const {
  QuantileLossConfig q;
  q.kappa = kappa;
  q.n_taus = n_taus;
  q.n_target = 1;
  q.mode = loss_mode;
  return q;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ParameterError("epochs must be >= 1");
  if (estimator_epochs && *estimator_epochs == 0) {
    throw ParameterError("estimator epochs must be >= 1");
  }
  if (batch_size == 0) throw ParameterError("batch_size must be >= 1");
  if (!(adadelta.lr > 0.0)) throw ParameterError("learning rate must be > 0");
  quantile_loss_config().validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"estimator_epochs", phase2_epochs()},
          {"batch_size", batch_size},
          {"seed", seed},
          {"dropout_enabled", dropout_enabled},
          {"n_taus", n_taus},
          {"kappa", kappa},
          {"loss_mode", to_string(loss_mode)},
          {"dataset", to_string(dataset)},
          {"precision", to_string(precision)},
          {"freeze_backbone", freeze_backbone},
          {"lr", adadelta.lr},
          {"adadelta_rho", adadelta.rho},
          {"adadelta_eps", adadelta.eps},
          {"lr_gamma", lr_gamma},
          {"lr_step_every", lr_step_every}};
}

nlohmann::json RunRecord::to_json() const {
  nlohmann::json j;
  j["config"] = config;
  j["wall_clock_seconds"] = wall_clock_seconds;
  j["checkpoints"] = checkpoint_paths;
  j["code_version"] = code_version;
  auto& rows = j["epochs"];
  rows = nlohmann::json::array();
  for (const auto& m : epochs) {
    nlohmann::json row = {{"phase", m.phase}, {"epoch", m.epoch}, {"lr", m.lr},
                          {"loss", m.loss}};
    if (m.accuracy) row["accuracy"] = *m.accuracy;
    rows.push_back(row);
  }
  return j;
}

std::string code_version() { return LQIQ_CODE_VERSION; }

Rng make_rng(std::uint64_t seed, RngStream stream) {
  return Rng::stream(seed, static_cast<std::uint64_t>(stream));
}

template <typename T>
TrainedClassifier<T> train_classifier(
    const LabeledDataset& train, const TrainConfig& cfg,
    const std::optional<std::filesystem::path>& checkpoint) {
  cfg.validate();
  require_train_split(train);
  validate(train);
  const auto start = Clock::now();
  ModelSpec spec = ModelSpec::for_dataset(cfg.dataset, cfg.dropout_enabled);
  spec.in_channels = train.channels();
  spec.height = train.height();
  spec.width = train.width();
  spec.num_classes = train.num_classes;

  Rng init_rng = make_rng(cfg.seed, RngStream::kClassifierInit);
  TrainedClassifier<T> out{Classifier<T>(spec, init_rng), start_record(cfg)};
  auto& model = out.model;
  Rng dropout_rng = make_rng(cfg.seed, RngStream::kClassifierDropout);
  Adadelta<T> optimizer(model.parameters(), cfg.adadelta);

  fit<T>("classifier", train, cfg, cfg.epochs,
         make_rng(cfg.seed, RngStream::kClassifierShuffle), optimizer, true,
         out.record,
         [&](const Batch& batch, std::size_t& correct) {
           const auto log_probs =
               model.forward(images_as<T>(batch), true, &dropout_rng);
           const std::size_t classes = log_probs.dim(1);
           const auto values = log_probs.data();
           for (std::size_t r = 0; r < batch.labels.size(); ++r) {
             const auto row = values.subspan(r * classes, classes);
             const auto best = std::max_element(row.begin(), row.end()) - row.begin();
             if (best == batch.labels[r]) ++correct;
           }
           return cross_entropy(log_probs, batch.labels).mean;
         },
         [&](std::size_t epoch) {
           if (auto p = checkpoint_after_epoch(model, optimizer, checkpoint, epoch)) {
             if (out.record.checkpoint_paths.empty()) out.record.checkpoint_paths.push_back(*p);
           }
         });
  out.record.wall_clock_seconds = seconds_since(start);
  return out;
}

template <typename T>
ClassifierEvaluation evaluate_classifier(const Classifier<T>& classifier,
                                         const LabeledDataset& dataset,
                                         std::size_t batch_size) {
  NoGradGuard no_grad;
  ClassifierEvaluation eval;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  BatchIterator batches(dataset, batch_size, 0, false, false);
  batches.start_epoch();
  while (auto batch = batches.next()) {
    const auto log_probs = classifier.forward(images_as<T>(*batch), false);
    const auto ce = cross_entropy(log_probs, batch->labels);
    for (const T v : ce.per_example.data()) loss_sum += static_cast<double>(v);
    const std::size_t classes = log_probs.dim(1);
    for (std::size_t r = 0; r < batch->labels.size(); ++r) {
      const auto row = log_probs.data().subspan(r * classes, classes);
      if (std::max_element(row.begin(), row.end()) - row.begin() == batch->labels[r]) {
        ++correct;
      }
    }
    eval.count += batch->labels.size();
  }
  if (eval.count > 0) {
    eval.mean_loss = loss_sum / static_cast<double>(eval.count);
    eval.accuracy = static_cast<double>(correct) / static_cast<double>(eval.count);
  }
  return eval;
}

template <typename T>
std::vector<float> compute_target_losses(const Classifier<T>& classifier,
                                         const LabeledDataset& dataset,
                                         std::size_t batch_size) {
  NoGradGuard no_grad;
  std::vector<float> losses;
  losses.reserve(dataset.size());
  BatchIterator batches(dataset, batch_size, 0, false, false);
  batches.start_epoch();
  while (auto batch = batches.next()) {
    const auto ce =
        cross_entropy(classifier.forward(images_as<T>(*batch), false), batch->labels);
    for (const T v : ce.per_example.data()) losses.push_back(static_cast<float>(v));
  }
  return losses;
}

void save_target_losses(const std::filesystem::path& path,
                        std::span<const float> losses) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  auto put_u32 = [&](std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v), static_cast<char>(v >> 8),
                           static_cast<char>(v >> 16), static_cast<char>(v >> 24)};
    out.write(bytes, 4);
  };
  put_u32(static_cast<std::uint32_t>(losses.size()));
  for (const float v : losses) put_u32(std::bit_cast<std::uint32_t>(v));
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<float> load_target_losses(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  auto u32_at = [&](std::size_t at) {
    return std::uint32_t{bytes[at]} | (std::uint32_t{bytes[at + 1]} << 8) |
           (std::uint32_t{bytes[at + 2]} << 16) | (std::uint32_t{bytes[at + 3]} << 24);
  };
  if (bytes.size() < 4) {
    throw LengthError(path.string() + ": truncated at byte " +
                          std::to_string(bytes.size()) + " reading count",
                      bytes.size());
  }
  const std::size_t n = u32_at(0);
  if (bytes.size() != 4 + 4 * n) {
    throw LengthError(path.string() + ": count " + std::to_string(n) +
                          " needs " + std::to_string(4 + 4 * n) + " bytes, file has " +
                          std::to_string(bytes.size()),
                      std::min(bytes.size(), 4 + 4 * n));
  }
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::bit_cast<float>(u32_at(4 + 4 * i));
  return out;
}

template <typename T>
TrainedIqn<T> train_iqn(const Classifier<T>& classifier, const LabeledDataset& train,
                        std::span<const float> target_losses, const TrainConfig& cfg,
                        const std::optional<std::filesystem::path>& checkpoint) {
  cfg.validate();
  require_train_split(train);
  require_targets(train, target_losses);
  const auto start = Clock::now();
  Rng init_rng = make_rng(cfg.seed, RngStream::kIqnInit);
  ModelSpec spec = classifier.spec();
  spec.dropout_enabled = cfg.dropout_enabled;
  TrainedIqn<T> out{IqnModel<T>(spec, init_rng), start_record(cfg)};
  auto& model = out.model;
  transfer_weights(classifier, model);
  if (cfg.freeze_backbone) model.backbone().set_trainable(false);
  Adadelta<T> optimizer(cfg.freeze_backbone ? model.head_parameters() : model.parameters(),
                        cfg.adadelta);
  Rng dropout_rng = make_rng(cfg.seed, RngStream::kIqnDropout);
  TauSampler taus(make_rng(cfg.seed, RngStream::kIqnTaus));
  const auto loss_cfg = cfg.quantile_loss_config();

  fit<T>("iqn", train, cfg, cfg.phase2_epochs(),
         make_rng(cfg.seed, RngStream::kIqnShuffle), optimizer, false, out.record,
         [&](const Batch& batch, std::size_t&) {
           const auto tau = taus.sample<T>(batch.labels.size(), cfg.n_taus);
           const auto predicted =
               model.forward(images_as<T>(batch), tau, true, &dropout_rng);
           return quantile_loss(predicted, gather_targets<T>(target_losses, batch.indices),
                                tau, loss_cfg);
         },
         [&](std::size_t epoch) {
           if (auto p = checkpoint_after_epoch(model, optimizer, checkpoint, epoch)) {
             if (out.record.checkpoint_paths.empty()) out.record.checkpoint_paths.push_back(*p);
           }
         });
  out.record.wall_clock_seconds = seconds_since(start);
  return out;
}

template <typename T>
TrainedScalar<T> train_scalar(const Classifier<T>& classifier,
                              const LabeledDataset& train,
                              std::span<const float> target_losses,
                              const TrainConfig& cfg,
                              const std::optional<std::filesystem::path>& checkpoint) {
  cfg.validate();
  require_train_split(train);
  require_targets(train, target_losses);
  const auto start = Clock::now();
  Rng init_rng = make_rng(cfg.seed, RngStream::kScalarInit);
  ModelSpec spec = classifier.spec();
  spec.dropout_enabled = cfg.dropout_enabled;
  TrainedScalar<T> out{ScalarModel<T>(spec, init_rng), start_record(cfg)};
  auto& model = out.model;
  transfer_weights(classifier, model);
  if (cfg.freeze_backbone) model.backbone().set_trainable(false);
  Adadelta<T> optimizer(cfg.freeze_backbone ? model.head_parameters() : model.parameters(),
                        cfg.adadelta);
  Rng dropout_rng = make_rng(cfg.seed, RngStream::kScalarDropout);

  fit<T>("scalar", train, cfg, cfg.phase2_epochs(),
         make_rng(cfg.seed, RngStream::kScalarShuffle), optimizer, false, out.record,
         [&](const Batch& batch, std::size_t&) {
           const auto predicted =
               model.forward(images_as<T>(batch), true, &dropout_rng);
           const auto target = gather_targets<T>(target_losses, batch.indices);
           return mse(reshape(predicted, {batch.labels.size()}), target);
         },
         [&](std::size_t epoch) {
           if (auto p = checkpoint_after_epoch(model, optimizer, checkpoint, epoch)) {
             if (out.record.checkpoint_paths.empty()) out.record.checkpoint_paths.push_back(*p);
           }
         });
  out.record.wall_clock_seconds = seconds_since(start);
  return out;
}

template <typename Model>
void save_model(const Model& model, const std::filesystem::path& path,
                std::span<const NamedArray> extra) {
  auto arrays = to_arrays(model.parameters());
  arrays.insert(arrays.end(), extra.begin(), extra.end());
  save_checkpoint(path, arrays);
  auto meta_path = path;
  meta_path.replace_extension(".json");
  std::ofstream meta(meta_path, std::ios::trunc);
  if (!meta) throw IoError("cannot open " + meta_path.string() + " for writing");
  meta << model_metadata(model).dump(2) << '\n';
}

template <typename Model>
Model load_model(const std::filesystem::path& path) {
  auto meta_path = path;
  meta_path.replace_extension(".json");
  std::ifstream meta(meta_path);
  if (!meta) throw IoError("missing model metadata " + meta_path.string());
  const auto j = nlohmann::json::parse(meta);
  if (j.at("kind").get<std::string>() != Model::kind()) {
    throw ContractError(meta_path.string() + " describes a " +
                        j.at("kind").get<std::string>() + " model, expected " +
                        Model::kind());
  }
  Rng unused(0);
  Model model(model_spec_from_json(j.at("spec")), unused);
  assign_from_arrays(model.parameters(), load_checkpoint(path));
  return model;
}

void write_metrics_csv(const std::filesystem::path& path,
                       std::span<const EpochMetrics> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "phase,epoch,lr,loss,accuracy\n";
  char buf[160];
  for (const auto& m : rows) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.9g,%.9g,", m.phase.c_str(), m.epoch,
                  m.lr, m.loss);
    out << buf;
    if (m.accuracy) {
      std::snprintf(buf, sizeof buf, "%.9g", *m.accuracy);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

#define LQIQ_INSTANTIATE_TRAINING(T)                                              \
  template TrainedClassifier<T> train_classifier(                                 \
      const LabeledDataset&, const TrainConfig&,                                  \
      const std::optional<std::filesystem::path>&);                               \
  template ClassifierEvaluation evaluate_classifier(const Classifier<T>&,         \
                                                    const LabeledDataset&,        \
                                                    std::size_t);                 \
  template std::vector<float> compute_target_losses(const Classifier<T>&,         \
                                                    const LabeledDataset&,        \
                                                    std::size_t);                 \
  template TrainedIqn<T> train_iqn(const Classifier<T>&, const LabeledDataset&,   \
                                   std::span<const float>, const TrainConfig&,    \
                                   const std::optional<std::filesystem::path>&);  \
  template TrainedScalar<T> train_scalar(                                         \
      const Classifier<T>&, const LabeledDataset&, std::span<const float>,        \
      const TrainConfig&, const std::optional<std::filesystem::path>&);           \
  template void save_model(const Classifier<T>&, const std::filesystem::path&,    \
                           std::span<const NamedArray>);                          \
  template void save_model(const IqnModel<T>&, const std::filesystem::path&,      \
                           std::span<const NamedArray>);                          \
  template void save_model(const ScalarModel<T>&, const std::filesystem::path&,   \
                           std::span<const NamedArray>);                          \
  template Classifier<T> load_model(const std::filesystem::path&);                \
  template IqnModel<T> load_model(const std::filesystem::path&);                  \
  template ScalarModel<T> load_model(const std::filesystem::path&);

LQIQ_INSTANTIATE_TRAINING(float)
LQIQ_INSTANTIATE_TRAINING(double)

#undef LQIQ_INSTANTIATE_TRAINING

}  // namespace lqiq

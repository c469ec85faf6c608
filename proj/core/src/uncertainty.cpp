#include "lqiq/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "lqiq/errors.hpp"
#include "lqiq/ops.hpp"

namespace lqiq {

namespace {

constexpr std::size_t kTauChunk = 4096;
constexpr std::uint64_t kEstimateStream = 0x6573746dULL;

Rng tau_rng(std::uint64_t seed, std::size_t example_id) {
  return Rng::stream(mix_seed(seed ^ kEstimateStream), example_id);
}

void summarize(LossDistributionEstimate& e, std::span<const double> values) {
  double sum = 0.0;
  for (double v : values) sum += v;
  e.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - e.mean) * (v - e.mean);
  e.std = std::sqrt(sq / static_cast<double>(values.size()));
}

// Quantiles for one example given its feature row [1 x width].
template <typename T>
std::vector<double> quantiles_for(const IqnModel<T>& model, const Tensor<T>& feature_row,
                                  std::span<const double> taus) {
  std::vector<double> out;
  out.reserve(taus.size());
  for (std::size_t start = 0; start < taus.size(); start += kTauChunk) {
    const std::size_t n = std::min(kTauChunk, taus.size() - start);
    std::vector<T> chunk(taus.begin() + static_cast<std::ptrdiff_t>(start),
                         taus.begin() + static_cast<std::ptrdiff_t>(start + n));
    const auto z = model.quantiles(feature_row, Tensor<T>({1, n}, std::move(chunk)));
    for (const T v : z.data()) out.push_back(static_cast<double>(v));
  }
  return out;
}

template <typename T>
Tensor<T> feature_row(const Tensor<T>& features, std::size_t row) {
  const std::size_t width = features.dim(1);
  const auto values = features.data().subspan(row * width, width);
  return Tensor<T>({1, width}, std::vector<T>(values.begin(), values.end()));
}

std::vector<double> draw_sorted_taus(std::uint64_t seed, std::size_t example_id,
                                     std::size_t num_taus) {
  Rng rng = tau_rng(seed, example_id);
  std::vector<double> taus(num_taus);
  for (auto& t : taus) t = rng.uniform();
  std::sort(taus.begin(), taus.end());
  return taus;
}

double accuracy_of(std::span<const std::int64_t> predictions,
                   std::span<const std::int64_t> labels, const std::vector<bool>& use,
                   std::size_t& count) {
  std::size_t correct = 0;
  count = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!use[i]) continue;
    ++count;
    if (predictions[i] == labels[i]) ++correct;
  }
  return count ? static_cast<double>(correct) / static_cast<double>(count) : 0.0;
}

void check_aligned(std::size_t scores, std::size_t predictions, std::size_t labels) {
  if (scores != predictions || scores != labels) {
    throw DimensionError("scores (" + std::to_string(scores) + "), predictions (" +
                         std::to_string(predictions) + ") and labels (" +
                         std::to_string(labels) + ") must align by example id");
  }
}

}  // namespace

template <typename T>
LossDistributionEstimate estimate_distribution(const IqnModel<T>& model,
                                               const LabeledDataset& dataset,
                                               std::size_t example_id,
                                               std::size_t num_taus,
                                               std::uint64_t seed) {
  if (num_taus == 0) throw ParameterError("num_taus must be >= 1");
  NoGradGuard no_grad;
  const std::size_t index[1] = {example_id};
  const Batch batch = gather_batch(dataset, index);
  const auto features =
      model.backbone().forward(tensor_cast<T>(batch.images), false, nullptr);
  LossDistributionEstimate e;
  e.example_id = example_id;
  e.tau_values = draw_sorted_taus(seed, example_id, num_taus);
  e.quantile_values = quantiles_for(model, features, e.tau_values);
  summarize(e, e.quantile_values);
  return e;
}

template <typename T>
std::vector<LossDistributionEstimate> estimate_distributions(
    const IqnModel<T>& model, const LabeledDataset& dataset, std::size_t num_taus,
    std::uint64_t seed, bool keep_values, std::size_t batch_size) {
  if (num_taus == 0) throw ParameterError("num_taus must be >= 1");
  NoGradGuard no_grad;
  std::vector<LossDistributionEstimate> out;
  out.reserve(dataset.size());
  BatchIterator batches(dataset, batch_size, 0, false, false);
  batches.start_epoch();
  while (auto batch = batches.next()) {
    const auto features =
        model.backbone().forward(tensor_cast<T>(batch->images), false, nullptr);
    for (std::size_t r = 0; r < batch->indices.size(); ++r) {
      LossDistributionEstimate e;
      e.example_id = batch->indices[r];
      auto taus = draw_sorted_taus(seed, e.example_id, num_taus);
      auto values = quantiles_for(model, feature_row(features, r), taus);
      summarize(e, values);
      if (keep_values) {
        e.tau_values = std::move(taus);
        e.quantile_values = std::move(values);
      }
      out.push_back(std::move(e));
    }
  }
  return out;
}

template <typename T>
std::vector<double> estimate_scalar(const ScalarModel<T>& model,
                                    const LabeledDataset& dataset,
                                    std::size_t batch_size) {
  NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(dataset.size());
  BatchIterator batches(dataset, batch_size, 0, false, false);
  batches.start_epoch();
  while (auto batch = batches.next()) {
    const auto z = model.forward(tensor_cast<T>(batch->images), false);
    for (const T v : z.data()) out.push_back(static_cast<double>(v));
  }
  return out;
}

std::vector<double> estimate_means(std::span<const LossDistributionEstimate> estimates) {
  std::vector<double> out;
  out.reserve(estimates.size());
  for (const auto& e : estimates) out.push_back(e.mean);
  return out;
}

Calibration calibration_from(std::span<const double> scores) {
  if (scores.empty()) throw ParameterError("calibration needs at least one score");
  Calibration c;
  double sum = 0.0;
  for (double s : scores) sum += s;
  c.mean = sum / static_cast<double>(scores.size());
  double sq = 0.0;
  for (double s : scores) sq += (s - c.mean) * (s - c.mean);
  c.std = std::sqrt(sq / static_cast<double>(scores.size()));
  return c;
}

UncertaintyStats compute_stats(std::span<const double> scores,
                               std::span<const std::int64_t> predictions,
                               std::span<const std::int64_t> labels,
                               std::span<const double> zeros_scores) {
  check_aligned(scores.size(), predictions.size(), labels.size());
  std::vector<double> evaluated;
  double correct_sum = 0.0, incorrect_sum = 0.0;
  std::size_t correct_n = 0, incorrect_n = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == kProbeLabel) continue;
    evaluated.push_back(scores[i]);
    if (predictions[i] == labels[i]) {
      correct_sum += scores[i];
      ++correct_n;
    } else {
      incorrect_sum += scores[i];
      ++incorrect_n;
    }
  }
  if (evaluated.empty()) throw ParameterError("compute_stats: no evaluated examples");
  UncertaintyStats stats;
  const auto cal = calibration_from(evaluated);
  stats.dataset_mean = cal.mean;
  stats.dataset_std = cal.std;
  if (incorrect_n) stats.incorrect_mean = incorrect_sum / static_cast<double>(incorrect_n);
  if (correct_n) stats.correct_mean = correct_sum / static_cast<double>(correct_n);
  if (!zeros_scores.empty()) {
    stats.zeros_mean = std::accumulate(zeros_scores.begin(), zeros_scores.end(), 0.0) /
                       static_cast<double>(zeros_scores.size());
  }
  return stats;
}

FilterReport filter_by_threshold(std::span<const double> scores,
                                 std::span<const std::int64_t> predictions,
                                 std::span<const std::int64_t> labels,
                                 double n_sigmas, std::optional<Calibration> calibration) {
  check_aligned(scores.size(), predictions.size(), labels.size());
  if (std::isnan(n_sigmas)) throw ParameterError("n_sigmas must not be NaN");
  std::vector<bool> evaluated(scores.size());
  std::vector<double> evaluated_scores;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    evaluated[i] = labels[i] != kProbeLabel;
    if (evaluated[i]) evaluated_scores.push_back(scores[i]);
  }
  const Calibration cal = calibration ? *calibration : calibration_from(evaluated_scores);

  FilterReport report;
  report.threshold_sigmas = n_sigmas;
  report.cutoff = std::isinf(n_sigmas) ? n_sigmas : cal.mean + n_sigmas * cal.std;
  report.kept.assign(scores.size(), false);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!evaluated[i]) continue;
    if (scores[i] <= report.cutoff) {
      report.kept[i] = true;
      ++report.kept_count;
    } else {
      ++report.removed_count;
    }
  }
  std::size_t count = 0;
  report.accuracy_all = accuracy_of(predictions, labels, evaluated, count);
  const double kept_accuracy = accuracy_of(predictions, labels, report.kept, count);
  if (count > 0) report.accuracy_kept = kept_accuracy;
  return report;
}

Histogram make_histogram(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw ParameterError("histogram needs at least one bin");
  if (values.empty()) throw ParameterError("histogram of an empty sample");
  auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it, hi = *hi_it;
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  Histogram h;
  h.edges.resize(bins + 1);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i <= bins; ++i) h.edges[i] = lo + width * static_cast<double>(i);
  h.edges.back() = hi;
  h.counts.assign(bins, 0);
  for (double v : values) {
    auto bin = static_cast<std::size_t>((v - lo) / width);
    if (bin >= bins) bin = bins - 1;
    ++h.counts[bin];
  }
  return h;
}

std::string format_float(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", value);
  return buf;
}

void export_histogram(std::span<const double> values, std::size_t bins,
                      double dataset_mean, const std::filesystem::path& path) {
  const Histogram h = make_histogram(values, bins);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open histogram file " + path.string() + " for writing");
  out << "kind,left,right,count\n";
  for (std::size_t i = 0; i < bins; ++i) {
    out << "bin," << format_float(h.edges[i]) << ',' << format_float(h.edges[i + 1])
        << ',' << h.counts[i] << '\n';
  }
  out << "mean," << format_float(dataset_mean) << ',' << format_float(dataset_mean)
      << ",\n";
  if (!out) throw IoError("write failed for histogram file " + path.string());
}

void write_stats_csv(const std::filesystem::path& path,
                     std::span<const NamedStats> columns) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  auto cell = [](const std::optional<double>& v) {
    return v ? format_float(*v) : std::string("NA");
  };
  out << "statistic";
  for (const auto& c : columns) out << ',' << c.variant;
  out << '\n';
  const std::pair<const char*, std::optional<double> UncertaintyStats::*> optional_rows[] = {
      {"Incorrect", &UncertaintyStats::incorrect_mean},
      {"Correct", &UncertaintyStats::correct_mean},
      {"Zeros", &UncertaintyStats::zeros_mean}};
  out << "Mean";
  for (const auto& c : columns) out << ',' << format_float(c.stats.dataset_mean);
  out << "\nStd";
  for (const auto& c : columns) out << ',' << format_float(c.stats.dataset_std);
  out << '\n';
  for (const auto& [name, member] : optional_rows) {
    out << name;
    for (const auto& c : columns) out << ',' << cell(c.stats.*member);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void write_filter_report_csv(const std::filesystem::path& path,
                             std::span<const NamedFilterReport> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "variant,n_sigmas,cutoff,kept,removed,accuracy_all_pct,accuracy_kept_pct\n";
  for (const auto& [variant, r] : rows) {
    out << variant << ',' << format_float(r.threshold_sigmas) << ','
        << format_float(r.cutoff) << ',' << r.kept_count << ',' << r.removed_count
        << ',' << format_float(100.0 * r.accuracy_all) << ','
        << (r.accuracy_kept ? format_float(100.0 * *r.accuracy_kept) : std::string("NA"))
        << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

#define LQIQ_INSTANTIATE_UNCERTAINTY(T)                                            \
  template LossDistributionEstimate estimate_distribution(                         \
      const IqnModel<T>&, const LabeledDataset&, std::size_t, std::size_t,         \
      std::uint64_t);                                                              \
  template std::vector<LossDistributionEstimate> estimate_distributions(           \
      const IqnModel<T>&, const LabeledDataset&, std::size_t, std::uint64_t, bool, \
      std::size_t);                                                                \
  template std::vector<double> estimate_scalar(const ScalarModel<T>&,              \
                                               const LabeledDataset&, std::size_t);

LQIQ_INSTANTIATE_UNCERTAINTY(float)
LQIQ_INSTANTIATE_UNCERTAINTY(double)

#undef LQIQ_INSTANTIATE_UNCERTAINTY

}  // namespace lqiq

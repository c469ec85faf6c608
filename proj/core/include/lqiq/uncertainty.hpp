#ifndef LQIQ_UNCERTAINTY_HPP_
#define LQIQ_UNCERTAINTY_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lqiq/data.hpp"
#include "lqiq/models.hpp"

namespace lqiq {

// Sampled loss distribution for one example. `mean` is the per-example
// uncertainty score used by the statistics and the filter.
struct LossDistributionEstimate {
  std::size_t example_id = 0;
  std::vector<double> tau_values;       // ascending
  std::vector<double> quantile_values;  // Z_tau(x) for each tau
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

// Taus for example `example_id` come from their own stream of `seed`, so the
// estimate does not depend on batching or evaluation order.
template <typename T>
LossDistributionEstimate estimate_distribution(const IqnModel<T>& model,
                                               const LabeledDataset& dataset,
                                               std::size_t example_id,
                                               std::size_t num_taus,
                                               std::uint64_t seed);

// Eval-mode estimates for every example. With keep_values == false only
// mean/std are filled (the tau and quantile lists stay empty).
template <typename T>
std::vector<LossDistributionEstimate> estimate_distributions(
    const IqnModel<T>& model, const LabeledDataset& dataset, std::size_t num_taus,
    std::uint64_t seed, bool keep_values = false, std::size_t batch_size = 128);

// One eval-mode scalar loss estimate per example.
template <typename T>
std::vector<double> estimate_scalar(const ScalarModel<T>& model,
                                    const LabeledDataset& dataset,
                                    std::size_t batch_size = 256);

std::vector<double> estimate_means(std::span<const LossDistributionEstimate> estimates);

struct UncertaintyStats {
  double dataset_mean = 0.0;
  double dataset_std = 0.0;
  std::optional<double> incorrect_mean;  // absent when no prediction is wrong
  std::optional<double> correct_mean;
  std::optional<double> zeros_mean;
};

// Group means of per-example scores. Entries whose label is kProbeLabel are
// ignored; probe scores are passed separately in `zeros_scores`.
UncertaintyStats compute_stats(std::span<const double> scores,
                               std::span<const std::int64_t> predictions,
                               std::span<const std::int64_t> labels,
                               std::span<const double> zeros_scores);

struct Calibration {
  double mean = 0.0;
  double std = 0.0;
};

struct FilterReport {
  double threshold_sigmas = 0.0;
  double cutoff = 0.0;
  std::size_t kept_count = 0;
  std::size_t removed_count = 0;
  double accuracy_all = 0.0;
  std::optional<double> accuracy_kept;  // absent when everything is removed
  std::vector<bool> kept;               // aligned with the inputs

  std::size_t total() const { return kept_count + removed_count; }
};

// Keeps examples whose score is <= mean + n_sigmas * std. mean and std come
// from `calibration` when given, otherwise from the scores themselves
// (population std). Probe entries (kProbeLabel) are neither kept nor counted.
FilterReport filter_by_threshold(std::span<const double> scores,
                                 std::span<const std::int64_t> predictions,
                                 std::span<const std::int64_t> labels,
                                 double n_sigmas,
                                 std::optional<Calibration> calibration = std::nullopt);

Calibration calibration_from(std::span<const double> scores);

struct Histogram {
  std::vector<double> edges;  // bins + 1 ascending edges
  std::vector<std::size_t> counts;
};

// Equal-width bins over [min, max] of `values`; the last bin is closed.
// Constant input gets the range [v - 0.5, v + 0.5].
Histogram make_histogram(std::span<const double> values, std::size_t bins);

// CSV columns kind,left,right,count. One "bin" row per bin, then a single
// "mean" row whose left and right both hold `dataset_mean`.
void export_histogram(std::span<const double> values, std::size_t bins,
                      double dataset_mean, const std::filesystem::path& path);

struct NamedStats {
  std::string variant;
  UncertaintyStats stats;
};
struct NamedFilterReport {
  std::string variant;
  FilterReport report;
};

// stats.csv: statistic,<variant>... with rows Mean, Std, Incorrect, Correct,
// Zeros. Missing values are written as NA.
void write_stats_csv(const std::filesystem::path& path,
                     std::span<const NamedStats> columns);

// filter_report.csv: variant,n_sigmas,cutoff,kept,removed,accuracy_all_pct,
// accuracy_kept_pct.
void write_filter_report_csv(const std::filesystem::path& path,
                             std::span<const NamedFilterReport> rows);

// %.6g
std::string format_float(double value);

}  // namespace lqiq

#endif  // LQIQ_UNCERTAINTY_HPP_

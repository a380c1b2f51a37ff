#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace ecgf::metrics {

/// Scores and binary truth for one label.
struct ScoredSet {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  std::vector<std::string> record_ids;

  std::size_t size() const noexcept { return scores.size(); }
  std::size_t positives() const;
  void validate() const;
};

/// Mann-Whitney form: (ordered pairs + half the tied pairs) / (pos * neg).
/// Throws "undefined AUROC" when either class is missing.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);
double auroc(const ScoredSet& set);

/// Step-wise area under the precision-recall curve over descending score
/// thresholds, tied scores entering together.
double auprc(std::span<const double> scores, std::span<const std::uint8_t> labels);
double auprc(const ScoredSet& set);

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

Confusion confusion(std::span<const double> scores, std::span<const std::uint8_t> labels,
                    double threshold);

/// Ratios with a zero denominator are absent.
struct ConfusionMetrics {
  std::optional<double> sensitivity, specificity, accuracy, f1, ppv, npv;
};

ConfusionMetrics confusion_metrics(const Confusion& c);
ConfusionMetrics confusion_metrics(const ScoredSet& set, double threshold);

enum class ThresholdPolicy { fixed, youden };

/// fixed -> `fixed_value`; youden -> the score midpoint maximizing
/// sensitivity + specificity - 1, ties to the higher threshold.
double select_threshold(std::span<const double> scores, std::span<const std::uint8_t> labels,
                        ThresholdPolicy policy, double fixed_value = 0.5);
double select_threshold(const ScoredSet& set, ThresholdPolicy policy, double fixed_value = 0.5);

enum class Metric { auroc, auprc, sensitivity, specificity, accuracy, f1, ppv, npv };

inline constexpr Metric kAllMetrics[] = {Metric::auroc,       Metric::auprc,    Metric::sensitivity,
                                         Metric::specificity, Metric::accuracy, Metric::f1,
                                         Metric::ppv,         Metric::npv};

std::string_view to_string(Metric m);
Metric parse_metric(std::string_view name);

/// Absent when the metric is undefined on these inputs.
std::optional<double> compute_metric(Metric m, std::span<const double> scores,
                                     std::span<const std::uint8_t> labels, double threshold);

struct Interval {
  double point = 0;
  double low = 0;
  double high = 0;
  std::size_t n_resamples = 0;
};

/// Percentile interval of `stat` over record-level resamples. Resample b
/// draws from its own stream seeded by (seed, b), so the result does not
/// depend on `workers`. Resamples where `stat` is undefined are redrawn up
/// to `max_retries` times and dropped after that.
Interval bootstrap(std::size_t n_records,
                   const std::function<std::optional<double>(std::span<const std::size_t>)>& stat,
                   std::size_t n_boot, std::uint64_t seed, std::size_t workers = 1,
                   std::size_t max_retries = 100);

Interval bootstrap_ci(const ScoredSet& set, Metric metric, std::size_t n_boot, std::uint64_t seed,
                      double threshold = 0.5, std::size_t workers = 1);

/// Linear interpolation between closest ranks; `sorted` ascending.
double percentile(std::span<const double> sorted, double q);

struct RegressionMetrics {
  double mae = 0;
  double rmse = 0;
  std::optional<double> pearson_r;
};

RegressionMetrics regression_metrics(std::span<const double> preds, std::span<const double> targets);

/// Mean AUROC over the labels that have both classes; scores and labels are
/// n x n_labels row-major. Absent when no label qualifies.
std::optional<double> macro_auroc(std::span<const double> scores,
                                  std::span<const std::uint8_t> labels, std::size_t n_labels);

/// (fpr, tpr) from (0, 0) to (1, 1), one point per distinct threshold.
std::vector<std::pair<double, double>> roc_curve(std::span<const double> scores,
                                                 std::span<const std::uint8_t> labels);
/// (recall, precision), one point per distinct threshold, descending.
std::vector<std::pair<double, double>> pr_curve(std::span<const double> scores,
                                                std::span<const std::uint8_t> labels);

struct MetricValue {
  std::optional<double> point;
  std::optional<double> low;
  std::optional<double> high;
};

struct LabelReport {
  std::string name;
  std::size_t n = 0;
  std::size_t positives = 0;
  double threshold = 0.5;
  std::optional<double> youden_threshold;
  std::map<Metric, MetricValue> values;
};

struct ReportConfig {
  std::size_t n_boot = 1000;
  std::uint64_t seed = 0;
  ThresholdPolicy policy = ThresholdPolicy::fixed;
  double threshold = 0.5;
  std::size_t workers = 1;
};

struct MetricReport {
  std::vector<LabelReport> labels;
  std::map<Metric, MetricValue> macro;
  ReportConfig config;
};

/// Per-label and macro metrics with bootstrap intervals. Macro values are the
/// unweighted mean over labels where the metric is defined; their intervals
/// resample records jointly across labels.
MetricReport build_report(std::span<const double> scores, std::span<const std::uint8_t> labels,
                          const std::vector<std::string>& label_names, const ReportConfig& cfg);

void to_json(nlohmann::json& j, const MetricReport& r);

std::string curve_csv(const std::vector<std::pair<double, double>>& curve, std::string_view x_name,
                      std::string_view y_name);

}  // namespace ecgf::metrics

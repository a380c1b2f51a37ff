#include "ecgf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "ecgf/error.hpp"
#include "ecgf/rng.hpp"

namespace ecgf::metrics {

namespace {

void check_pair(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ConfigError("scores and labels differ in length");
  for (auto y : labels)
    if (y > 1) throw ConfigError("labels must be 0 or 1");
  for (double s : scores)
    if (std::isnan(s)) throw ConfigError("NaN score");
}

std::vector<std::size_t> order_by_score(std::span<const double> scores, bool descending) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return descending ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  return idx;
}

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::size_t ScoredSet::positives() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
}

void ScoredSet::validate() const {
  check_pair(scores, labels);
  if (!record_ids.empty() && record_ids.size() != scores.size())
    throw ConfigError("record_ids differ in length from scores");
}

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_pair(scores, labels);
  const auto idx = order_by_score(scores, false);
  std::uint64_t pos = 0, neg = 0, twice_u = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::uint64_t gp = 0, gn = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] ? gp : gn) += 1;
      ++j;
    }
    twice_u += 2 * gp * neg + gp * gn;
    pos += gp;
    neg += gn;
    i = j;
  }
  if (pos == 0 || neg == 0) throw ConfigError("undefined AUROC: single-class input");
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

double auroc(const ScoredSet& set) { return auroc(set.scores, set.labels); }

double auprc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_pair(scores, labels);
  const auto total_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (total_pos == 0) throw ConfigError("undefined AUPRC: no positives");
  const auto idx = order_by_score(scores, true);
  std::size_t tp = 0, fp = 0;
  double area = 0, prev_recall = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] ? tp : fp) += 1;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return area;
}

double auprc(const ScoredSet& set) { return auprc(set.scores, set.labels); }

Confusion confusion(std::span<const double> scores, std::span<const std::uint8_t> labels,
                    double threshold) {
  check_pair(scores, labels);
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i]) (pred ? c.tp : c.fn) += 1;
    else (pred ? c.fp : c.tn) += 1;
  }
  return c;
}

ConfusionMetrics confusion_metrics(const Confusion& c) {
  ConfusionMetrics m;
  m.sensitivity = ratio(c.tp, c.tp + c.fn);
  m.specificity = ratio(c.tn, c.tn + c.fp);
  m.accuracy = ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn);
  m.ppv = ratio(c.tp, c.tp + c.fp);
  m.npv = ratio(c.tn, c.tn + c.fn);
  m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  return m;
}

ConfusionMetrics confusion_metrics(const ScoredSet& set, double threshold) {
  return confusion_metrics(confusion(set.scores, set.labels, threshold));
}

double select_threshold(std::span<const double> scores, std::span<const std::uint8_t> labels,
                        ThresholdPolicy policy, double fixed_value) {
  if (policy == ThresholdPolicy::fixed) return fixed_value;
  check_pair(scores, labels);
  const auto idx = order_by_score(scores, false);
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw ConfigError("Youden threshold needs both classes");

  // Sweep ascending: after consuming a group, everything above the next
  // midpoint is predicted positive.
  std::size_t neg_below = 0, pos_below = 0;
  double best_j = -std::numeric_limits<double>::infinity();
  double best_t = scores[idx.front()];
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] ? pos_below : neg_below) += 1;
      ++j;
    }
    if (j == idx.size()) break;
    const double t = 0.5 * (scores[idx[i]] + scores[idx[j]]);
    const double sens = static_cast<double>(pos - pos_below) / static_cast<double>(pos);
    const double spec = static_cast<double>(neg_below) / static_cast<double>(neg);
    const double youden = sens + spec - 1.0;
    if (youden >= best_j) {
      best_j = youden;
      best_t = t;
    }
    i = j;
  }
  return best_t;
}

double select_threshold(const ScoredSet& set, ThresholdPolicy policy, double fixed_value) {
  return select_threshold(set.scores, set.labels, policy, fixed_value);
}

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::auroc: return "auroc";
    case Metric::auprc: return "auprc";
    case Metric::sensitivity: return "sensitivity";
    case Metric::specificity: return "specificity";
    case Metric::accuracy: return "accuracy";
    case Metric::f1: return "f1";
    case Metric::ppv: return "ppv";
    case Metric::npv: return "npv";
  }
  return "auroc";
}

Metric parse_metric(std::string_view name) {
  for (Metric m : kAllMetrics)
    if (to_string(m) == name) return m;
  throw ConfigError("unknown metric " + std::string(name));
}

std::optional<double> compute_metric(Metric m, std::span<const double> scores,
                                     std::span<const std::uint8_t> labels, double threshold) {
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  switch (m) {
    case Metric::auroc:
      if (pos == 0 || pos == labels.size()) return std::nullopt;
      return auroc(scores, labels);
    case Metric::auprc:
      if (pos == 0) return std::nullopt;
      return auprc(scores, labels);
    default:
      break;
  }
  const auto cm = confusion_metrics(confusion(scores, labels, threshold));
  switch (m) {
    case Metric::sensitivity: return cm.sensitivity;
    case Metric::specificity: return cm.specificity;
    case Metric::accuracy: return cm.accuracy;
    case Metric::f1: return cm.f1;
    case Metric::ppv: return cm.ppv;
    case Metric::npv: return cm.npv;
    default: return std::nullopt;
  }
}

double percentile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ConfigError("percentile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Interval bootstrap(std::size_t n_records,
                   const std::function<std::optional<double>(std::span<const std::size_t>)>& stat,
                   std::size_t n_boot, std::uint64_t seed, std::size_t workers,
                   std::size_t max_retries) {
  if (n_records == 0) throw ConfigError("bootstrap of an empty set");
  if (n_boot == 0) throw ConfigError("n_boot must be >= 1");
  std::vector<std::size_t> all(n_records);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto point = stat(all);
  if (!point) throw ConfigError("metric undefined on the full set");

  std::vector<std::optional<double>> draws(n_boot);
  const auto run = [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> idx(n_records);
    for (std::size_t b = begin; b < end; ++b) {
      Rng rng(derive_seed(seed, {b}));
      for (std::size_t attempt = 0; attempt <= max_retries; ++attempt) {
        for (auto& i : idx) i = static_cast<std::size_t>(uniform_index(rng, n_records));
        if (auto v = stat(idx)) {
          draws[b] = v;
          break;
        }
      }
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, n_boot);
  if (workers == 1) {
    run(0, n_boot);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n_boot + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t b0 = w * chunk, b1 = std::min(n_boot, b0 + chunk);
      if (b0 < b1) pool.emplace_back(run, b0, b1);
    }
    for (auto& t : pool) t.join();
  }

  std::vector<double> values;
  values.reserve(n_boot);
  for (const auto& d : draws)
    if (d) values.push_back(*d);
  if (values.empty()) throw ConfigError("every bootstrap resample was undefined");
  std::sort(values.begin(), values.end());
  return {*point, percentile(values, 0.025), percentile(values, 0.975), values.size()};
}

Interval bootstrap_ci(const ScoredSet& set, Metric metric, std::size_t n_boot, std::uint64_t seed,
                      double threshold, std::size_t workers) {
  set.validate();
  const auto stat = [&](std::span<const std::size_t> idx) {
    std::vector<double> s(idx.size());
    std::vector<std::uint8_t> y(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      s[k] = set.scores[idx[k]];
      y[k] = set.labels[idx[k]];
    }
    return compute_metric(metric, s, y, threshold);
  };
  return bootstrap(set.size(), stat, n_boot, seed, workers);
}

RegressionMetrics regression_metrics(std::span<const double> preds, std::span<const double> targets) {
  if (preds.size() != targets.size()) throw ConfigError("predictions and targets differ in length");
  if (preds.size() < 2) throw ConfigError("regression metrics need at least two points");
  const auto n = static_cast<double>(preds.size());
  double abs_sum = 0, sq_sum = 0, mp = 0, mt = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double e = preds[i] - targets[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
    mp += preds[i];
    mt += targets[i];
  }
  mp /= n;
  mt /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double a = preds[i] - mp, b = targets[i] - mt;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  RegressionMetrics r;
  r.mae = abs_sum / n;
  r.rmse = std::sqrt(sq_sum / n);
  if (sxx > 0 && syy > 0) r.pearson_r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  return r;
}

std::optional<double> macro_auroc(std::span<const double> scores,
                                  std::span<const std::uint8_t> labels, std::size_t n_labels) {
  if (n_labels == 0 || scores.size() != labels.size() || scores.size() % n_labels != 0)
    throw ConfigError("score matrix shape mismatch");
  const std::size_t n = scores.size() / n_labels;
  std::vector<double> s(n);
  std::vector<std::uint8_t> y(n);
  double total = 0;
  std::size_t defined = 0;
  for (std::size_t k = 0; k < n_labels; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = scores[i * n_labels + k];
      y[i] = labels[i * n_labels + k];
    }
    if (auto v = compute_metric(Metric::auroc, s, y, 0.5)) {
      total += *v;
      ++defined;
    }
  }
  if (defined == 0) return std::nullopt;
  return total / static_cast<double>(defined);
}

std::vector<std::pair<double, double>> roc_curve(std::span<const double> scores,
                                                 std::span<const std::uint8_t> labels) {
  check_pair(scores, labels);
  const auto pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const auto neg = static_cast<double>(labels.size()) - pos;
  if (pos == 0 || neg == 0) throw ConfigError("ROC curve needs both classes");
  const auto idx = order_by_score(scores, true);
  std::vector<std::pair<double, double>> out{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] ? tp : fp) += 1;
      ++j;
    }
    out.emplace_back(static_cast<double>(fp) / neg, static_cast<double>(tp) / pos);
    i = j;
  }
  return out;
}

std::vector<std::pair<double, double>> pr_curve(std::span<const double> scores,
                                                std::span<const std::uint8_t> labels) {
  check_pair(scores, labels);
  const auto pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  if (pos == 0) throw ConfigError("PR curve needs positives");
  const auto idx = order_by_score(scores, true);
  std::vector<std::pair<double, double>> out;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] ? tp : fp) += 1;
      ++j;
    }
    out.emplace_back(static_cast<double>(tp) / pos,
                     static_cast<double>(tp) / static_cast<double>(tp + fp));
    i = j;
  }
  return out;
}

namespace {

struct Column {
  std::vector<double> s;
  std::vector<std::uint8_t> y;
};

Column column(std::span<const double> scores, std::span<const std::uint8_t> labels,
              std::size_t n_labels, std::size_t k, std::span<const std::size_t> rows) {
  Column c;
  c.s.resize(rows.size());
  c.y.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    c.s[i] = scores[rows[i] * n_labels + k];
    c.y[i] = labels[rows[i] * n_labels + k];
  }
  return c;
}

}  // namespace

MetricReport build_report(std::span<const double> scores, std::span<const std::uint8_t> labels,
                          const std::vector<std::string>& label_names, const ReportConfig& cfg) {
  const std::size_t L = label_names.size();
  if (L == 0 || scores.size() != labels.size() || scores.size() % L != 0)
    throw ConfigError("score matrix shape mismatch");
  check_pair(scores, labels);
  const std::size_t n = scores.size() / L;
  if (n == 0) throw ConfigError("empty evaluation set");

  MetricReport report;
  report.config = cfg;
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<double> thresholds(L, cfg.threshold);

  for (std::size_t k = 0; k < L; ++k) {
    const Column c = column(scores, labels, L, k, all);
    LabelReport lr;
    lr.name = label_names[k];
    lr.n = n;
    lr.positives = static_cast<std::size_t>(std::count(c.y.begin(), c.y.end(), 1));
    const bool both = lr.positives > 0 && lr.positives < n;
    if (both) lr.youden_threshold = select_threshold(c.s, c.y, ThresholdPolicy::youden);
    if (cfg.policy == ThresholdPolicy::youden && lr.youden_threshold)
      thresholds[k] = *lr.youden_threshold;
    lr.threshold = thresholds[k];
    for (Metric m : kAllMetrics) {
      MetricValue v;
      v.point = compute_metric(m, c.s, c.y, thresholds[k]);
      if (v.point && cfg.n_boot > 0) {
        const auto stat = [&, m, k](std::span<const std::size_t> rows) {
          const Column r = column(scores, labels, L, k, rows);
          return compute_metric(m, r.s, r.y, thresholds[k]);
        };
        const auto ci = bootstrap(n, stat, cfg.n_boot, derive_seed(cfg.seed, {k}), cfg.workers);
        v.low = ci.low;
        v.high = ci.high;
      }
      lr.values[m] = v;
    }
    report.labels.push_back(std::move(lr));
  }

  for (Metric m : kAllMetrics) {
    const auto macro_stat = [&, m](std::span<const std::size_t> rows) -> std::optional<double> {
      double total = 0;
      std::size_t defined = 0;
      for (std::size_t k = 0; k < L; ++k) {
        const Column r = column(scores, labels, L, k, rows);
        if (auto v = compute_metric(m, r.s, r.y, thresholds[k])) {
          total += *v;
          ++defined;
        }
      }
      if (defined == 0) return std::nullopt;
      return total / static_cast<double>(defined);
    };
    MetricValue v;
    v.point = macro_stat(all);
    if (v.point && cfg.n_boot > 0) {
      const auto ci = bootstrap(n, macro_stat, cfg.n_boot, derive_seed(cfg.seed, {L + 1}),
                                cfg.workers);
      v.low = ci.low;
      v.high = ci.high;
    }
    report.macro[m] = v;
  }
  return report;
}

namespace {

nlohmann::json value_json(const MetricValue& v) {
  const auto opt = [](const std::optional<double>& x) -> nlohmann::json {
    return x ? nlohmann::json(*x) : nlohmann::json(nullptr);
  };
  return {{"point", opt(v.point)}, {"ci_low", opt(v.low)}, {"ci_high", opt(v.high)}};
}

}  // namespace

void to_json(nlohmann::json& j, const MetricReport& r) {
  j = nlohmann::json::object();
  j["n_bootstrap"] = r.config.n_boot;
  j["seed"] = r.config.seed;
  j["threshold_policy"] = r.config.policy == ThresholdPolicy::fixed ? "fixed" : "youden";
  auto& labels = j["labels"] = nlohmann::json::array();
  for (const auto& lr : r.labels) {
    nlohmann::json e = {{"name", lr.name},
                        {"n", lr.n},
                        {"positives", lr.positives},
                        {"threshold", lr.threshold}};
    e["youden_threshold"] =
        lr.youden_threshold ? nlohmann::json(*lr.youden_threshold) : nlohmann::json(nullptr);
    for (const auto& [m, v] : lr.values) e["metrics"][std::string(to_string(m))] = value_json(v);
    labels.push_back(std::move(e));
  }
  for (const auto& [m, v] : r.macro) j["macro"][std::string(to_string(m))] = value_json(v);
}

std::string curve_csv(const std::vector<std::pair<double, double>>& curve, std::string_view x_name,
                      std::string_view y_name) {
  std::ostringstream out;
  out.precision(17);
  out << x_name << ',' << y_name << '\n';
  for (const auto& [x, y] : curve) out << x << ',' << y << '\n';
  return out.str();
}

}  // namespace ecgf::metrics

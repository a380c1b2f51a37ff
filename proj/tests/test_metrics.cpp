#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "ecgf/error.hpp"
#include "ecgf/metrics.hpp"
#include "ecgf/rng.hpp"

using namespace ecgf;
using namespace ecgf::metrics;

namespace {

using Labels = std::vector<std::uint8_t>;

double pair_count_auroc(const std::vector<double>& s, const Labels& y) {
  double good = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return good / pairs;
}

// Average precision written as the sum over distinct thresholds of
// (recall step) x (precision at that threshold).
double step_auprc(const std::vector<double>& s, const Labels& y) {
  std::vector<double> thresholds(s);
  std::sort(thresholds.rbegin(), thresholds.rend());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double pos = 0;
  for (auto v : y) pos += v;
  double area = 0, prev_recall = 0;
  for (double t : thresholds) {
    double tp = 0, called = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= t) {
        ++called;
        tp += y[i];
      }
    const double recall = tp / pos;
    area += (recall - prev_recall) * (tp / called);
    prev_recall = recall;
  }
  return area;
}

ScoredSet noisy_set(std::size_t n, double separation, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> noise(0, 1);
  ScoredSet s;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t y = uniform01(rng) < 0.3 ? 1 : 0;
    s.labels.push_back(y);
    s.scores.push_back(1 / (1 + std::exp(-(noise(rng) + separation * y))));
  }
  return s;
}

}  // namespace

TEST(Auroc, Examples) {
  EXPECT_DOUBLE_EQ(auroc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, Labels{0, 0, 1, 1}), 0.75);
  EXPECT_DOUBLE_EQ(auroc(std::vector<double>{0.3, 0.3, 0.3}, Labels{1, 0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(auroc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, Labels{0, 0, 1, 1}), 1.0);
}

TEST(Auroc, SingleClassUndefined) {
  try {
    auroc(std::vector<double>{0.1, 0.2}, Labels{1, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(std::string(e.what()).rfind("undefined AUROC", 0), 0u) << e.what();
  }
}

TEST(Auroc, EqualsPairCountingOnAllSmallLabelings) {
  Rng rng(1);
  for (std::size_t n = 2; n <= 8; ++n)
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
      Labels y(n);
      std::size_t pos = 0;
      for (std::size_t i = 0; i < n; ++i) pos += y[i] = (mask >> i) & 1;
      if (pos == 0 || pos == n) continue;
      std::vector<double> s(n);
      // Coarse scores so ties are common.
      for (auto& v : s) v = double(uniform_index(rng, 5)) / 4;
      EXPECT_EQ(auroc(s, y), pair_count_auroc(s, y));
    }
}

TEST(Auroc, EqualsPairCountingOnRandomCases) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 7);
    Labels y(n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = uniform01(rng) < 0.5;
      s[i] = uniform01(rng) < 0.3 ? 0.5 : uniform01(rng);
    }
    y[0] = 1;
    y[1] = 0;
    EXPECT_EQ(auroc(s, y), pair_count_auroc(s, y));
  }
}

TEST(Auroc, SymmetryAndMonotoneInvariance) {
  const auto set = noisy_set(300, 1.0, 3);
  const double a = auroc(set);
  Labels flipped;
  std::vector<double> mirrored, logistic, affine;
  for (std::size_t i = 0; i < set.size(); ++i) {
    flipped.push_back(1 - set.labels[i]);
    mirrored.push_back(1 - set.scores[i]);
    logistic.push_back(1 / (1 + std::exp(-5 * set.scores[i])));
    affine.push_back(3 * set.scores[i] - 7);
  }
  EXPECT_NEAR(auroc(mirrored, flipped), a, 1e-15);
  EXPECT_NEAR(auroc(set.scores, flipped), 1 - a, 1e-15);
  EXPECT_EQ(auroc(logistic, set.labels), a);
  EXPECT_EQ(auroc(affine, set.labels), a);
}

TEST(Auprc, Examples) {
  EXPECT_DOUBLE_EQ(auprc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, Labels{1, 1, 0, 0}), 1.0);
  // Recall 1/2 at precision 1, then recall 1 at precision 2/3.
  const std::vector<double> s{0.9, 0.8, 0.7};
  const Labels y{1, 0, 1};
  EXPECT_NEAR(auprc(s, y), 5.0 / 6.0, 1e-15);
  EXPECT_NEAR(step_auprc(s, y), 5.0 / 6.0, 1e-15);
  EXPECT_THROW(auprc(s, Labels{0, 0, 0}), Error);
}

TEST(Auprc, MatchesStepOracleWithTies) {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 30);
    Labels y(n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = uniform01(rng) < 0.4;
      s[i] = double(uniform_index(rng, 6)) / 5;
    }
    y[0] = 1;
    EXPECT_NEAR(auprc(s, y), step_auprc(s, y), 1e-12);
  }
}

TEST(Auprc, RandomScoresApproachPrevalence) {
  Rng rng(5);
  Labels y(2000);
  std::vector<double> s(2000);
  double pos = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = uniform01(rng) < 0.2;
    pos += y[i];
    s[i] = uniform01(rng);
  }
  EXPECT_NEAR(auprc(s, y), pos / 2000, 0.05);
}

TEST(Confusion, HandTable) {
  const auto m = confusion_metrics(Confusion{3, 1, 5, 1});
  EXPECT_DOUBLE_EQ(*m.sensitivity, 0.75);
  EXPECT_NEAR(*m.specificity, 5.0 / 6.0, 1e-15);
  EXPECT_DOUBLE_EQ(*m.ppv, 0.75);
  EXPECT_NEAR(*m.npv, 5.0 / 6.0, 1e-15);
  EXPECT_DOUBLE_EQ(*m.f1, 0.75);
  EXPECT_DOUBLE_EQ(*m.accuracy, 0.8);
}

TEST(Confusion, ThresholdInclusiveAndPerfect) {
  const auto m = confusion_metrics(ScoredSet{{0.9, 0.2}, {1, 0}, {}}, 0.5);
  for (const auto& v : {m.sensitivity, m.specificity, m.accuracy, m.f1, m.ppv, m.npv}) EXPECT_EQ(*v, 1.0);
  const auto c = confusion(std::vector<double>{0.5, 0.49}, Labels{1, 0}, 0.5);
  EXPECT_EQ(c.tp, 1u);
  EXPECT_EQ(c.tn, 1u);
}

TEST(Confusion, ZeroDenominatorsAreAbsent) {
  const auto m = confusion_metrics(ScoredSet{{0.2, 0.7}, {0, 0}, {}}, 0.5);
  EXPECT_FALSE(m.sensitivity.has_value());
  ASSERT_TRUE(m.specificity.has_value());
  EXPECT_DOUBLE_EQ(*m.specificity, 0.5);
  // 2tp / (2tp + fp + fn) = 0 / 1 is defined here.
  EXPECT_EQ(m.f1, 0.0);
  EXPECT_FALSE(confusion_metrics(Confusion{0, 0, 4, 0}).f1.has_value());
}

TEST(Threshold, FixedAndYouden) {
  const ScoredSet sep{{0.1, 0.2, 0.3, 0.7, 0.8, 0.95}, {0, 0, 0, 1, 1, 1}, {}};
  EXPECT_EQ(select_threshold(sep, ThresholdPolicy::fixed), 0.5);
  const double t = select_threshold(sep, ThresholdPolicy::youden);
  EXPECT_GT(t, 0.3);
  EXPECT_LT(t, 0.7);
  const auto m = confusion_metrics(sep, t);
  EXPECT_EQ(*m.sensitivity, 1.0);
  EXPECT_EQ(*m.specificity, 1.0);
  EXPECT_THROW(select_threshold(ScoredSet{{0.1}, {1}, {}}, ThresholdPolicy::youden), Error);
}

TEST(Threshold, YoudenNearZeroUnderNull) {
  Rng rng(6);
  ScoredSet s;
  for (int i = 0; i < 1000; ++i) {
    s.scores.push_back(uniform01(rng));
    s.labels.push_back(uniform01(rng) < 0.5);
  }
  const auto m = confusion_metrics(s, select_threshold(s, ThresholdPolicy::youden));
  EXPECT_LT(*m.sensitivity + *m.specificity - 1, 0.1);
}

TEST(Bootstrap, BoundsAndDeterminism) {
  const auto set = noisy_set(150, 1.2, 7);
  for (Metric m : kAllMetrics) {
    const auto a = bootstrap_ci(set, m, 1000, 11);
    EXPECT_LE(a.low, a.high) << to_string(m);
    EXPECT_GE(a.low, 0.0);
    EXPECT_LE(a.high, 1.0);
    const auto b = bootstrap_ci(set, m, 1000, 11, 0.5, 3);
    EXPECT_EQ(a.low, b.low);
    EXPECT_EQ(a.high, b.high);
    EXPECT_EQ(a.point, b.point);
  }
  EXPECT_NE(bootstrap_ci(set, Metric::auroc, 200, 11).low, bootstrap_ci(set, Metric::auroc, 200, 12).low);
}

TEST(Bootstrap, DegenerateSetHasZeroWidth) {
  ScoredSet s;
  for (int i = 0; i < 40; ++i) {
    s.labels.push_back(i % 3 == 0);
    s.scores.push_back(i % 3 == 0 ? 1.0 : 0.0);
  }
  const auto ci = bootstrap_ci(s, Metric::auroc, 500, 1);
  EXPECT_EQ(ci.low, 1.0);
  EXPECT_EQ(ci.point, 1.0);
  EXPECT_EQ(ci.high, 1.0);
}

TEST(Bootstrap, WidthShrinksLikeRootN) {
  std::vector<double> ratios;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto small = bootstrap_ci(noisy_set(200, 1.0, 100 + seed), Metric::auroc, 1000, seed);
    const auto large = bootstrap_ci(noisy_set(2000, 1.0, 200 + seed), Metric::auroc, 1000, seed);
    ratios.push_back((small.high - small.low) / (large.high - large.low));
  }
  std::sort(ratios.begin(), ratios.end());
  EXPECT_GE(ratios[1], 2.5);
  EXPECT_LE(ratios[1], 4.0);
}

TEST(Bootstrap, UndefinedOnFullSetRejected) {
  EXPECT_THROW(bootstrap_ci(ScoredSet{{0.1, 0.2}, {0, 0}, {}}, Metric::auroc, 10, 0), Error);
}

TEST(Percentile, LinearBetweenRanks) {
  const std::vector<double> v{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(percentile(v, 0), 1);
  EXPECT_DOUBLE_EQ(percentile(v, 1), 4);
  EXPECT_DOUBLE_EQ(percentile(v, 0.5), 2.5);
}

TEST(Regression, Examples) {
  const std::vector<double> t{1, 5, 2, 8};
  const auto same = regression_metrics(t, t);
  EXPECT_EQ(same.mae, 0.0);
  EXPECT_EQ(same.rmse, 0.0);
  EXPECT_NEAR(*same.pearson_r, 1.0, 1e-15);
  const auto r = regression_metrics(std::vector<double>{1, 2, 3}, std::vector<double>{2, 2, 2});
  EXPECT_NEAR(r.mae, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.rmse, std::sqrt(2.0 / 3.0), 1e-15);
  EXPECT_FALSE(r.pearson_r.has_value());
  std::vector<double> neg;
  for (double v : t) neg.push_back(-v);
  EXPECT_NEAR(*regression_metrics(neg, t).pearson_r, -1.0, 1e-15);
  EXPECT_THROW(regression_metrics(std::vector<double>{1, 2}, std::vector<double>{1}), Error);
}

TEST(Macro, UnweightedMeanOverDefinedLabels) {
  // Two records x three labels; the middle label has a single class.
  const std::vector<double> s{0.9, 0.5, 0.2, 0.1, 0.4, 0.7};
  const Labels y{1, 1, 1, 0, 1, 0};
  const double a0 = auroc(std::vector<double>{0.9, 0.1}, Labels{1, 0});
  const double a2 = auroc(std::vector<double>{0.2, 0.7}, Labels{1, 0});
  EXPECT_DOUBLE_EQ(*macro_auroc(s, y, 3), (a0 + a2) / 2);
  EXPECT_FALSE(macro_auroc(std::vector<double>{0.1}, Labels{1}, 1).has_value());
}

TEST(Curves, EndpointsAndCsv) {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.1};
  const Labels y{1, 0, 1, 0};
  const auto roc = roc_curve(s, y);
  EXPECT_EQ(roc.front(), std::make_pair(0.0, 0.0));
  EXPECT_EQ(roc.back(), std::make_pair(1.0, 1.0));
  const auto pr = pr_curve(s, y);
  EXPECT_EQ(pr.back().first, 1.0);
  const auto csv = curve_csv(roc, "fpr", "tpr");
  EXPECT_EQ(csv.substr(0, 8), "fpr,tpr\n");
}

TEST(Report, MacroAndJson) {
  Rng rng(8);
  std::vector<double> s;
  Labels y;
  for (int i = 0; i < 60; ++i)
    for (int k = 0; k < 2; ++k) {
      const std::uint8_t v = uniform01(rng) < 0.4;
      y.push_back(v);
      s.push_back(0.3 * v + 0.7 * uniform01(rng));
    }
  ReportConfig cfg;
  cfg.n_boot = 200;
  const auto r = build_report(s, y, {"a", "b"}, cfg);
  ASSERT_EQ(r.labels.size(), 2u);
  const double mean = (*r.labels[0].values.at(Metric::auroc).point + *r.labels[1].values.at(Metric::auroc).point) / 2;
  EXPECT_NEAR(*r.macro.at(Metric::auroc).point, mean, 1e-15);
  for (const auto& [m, v] : r.macro) {
    if (!v.point) continue;
    EXPECT_LE(*v.low, *v.high) << to_string(m);
  }
  const nlohmann::json j = r;
  EXPECT_TRUE(j.contains("labels"));
  EXPECT_TRUE(j.contains("macro"));
}

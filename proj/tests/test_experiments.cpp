#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "ecgf/error.hpp"
#include "ecgf/experiments.hpp"
#include "synthetic_task.hpp"
#include "test_util.hpp"

using namespace ecgf;
using namespace ecgf::experiments;

namespace {

Manifest many_positives(std::size_t records, std::size_t per_record) {
  Manifest m;
  for (std::size_t i = 0; i < records; ++i) {
    ManifestEntry e;
    e.record_id = "r" + std::to_string(i);
    e.patient_id = "p" + std::to_string(i);
    e.path = e.record_id + ".ecgb";
    for (std::size_t k = 0; k < per_record; ++k) e.labels.positives.insert(k);
    m.entries.push_back(e);
  }
  return m;
}

AblationSpec tiny_spec(Study study) {
  auto s = AblationSpec::defaults(study);
  s.synth.n_records = 40;
  s.synth.duration_s = 4;
  s.preprocess.window_s = 4;
  s.train.max_epochs = 2;
  s.train.batch_size = 16;
  s.n_seeds = 2;
  s.labels = testutil::task_labels();
  return s;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(Corrupt, ZeroRateIsIdentity) {
  const auto m = many_positives(50, 3);
  EXPECT_EQ(corrupt_labels(m, 0.0, 1), m);
}

TEST(Corrupt, HiddenCountConcentrates) {
  const auto m = many_positives(2000, 5);
  ASSERT_EQ(count_positives(m), 10000u);
  const auto c = corrupt_labels(m, 0.4, 7);
  const auto hidden = 10000 - count_positives(c);
  EXPECT_GE(hidden, 3700u);
  EXPECT_LE(hidden, 4300u);
}

TEST(Corrupt, OnlyRemovesPositives) {
  const auto d = generate_synthetic(testutil::mixed_cohort(200, 3));
  const auto c = corrupt_labels(d.manifest, 0.5, 2);
  ASSERT_EQ(c.size(), d.manifest.size());
  for (std::size_t i = 0; i < c.size(); ++i)
    for (auto k : c.entries[i].labels.positives) EXPECT_TRUE(d.manifest.entries[i].labels.contains(k));
  EXPECT_EQ(corrupt_labels(d.manifest, 0.5, 2), c);
  EXPECT_THROW(corrupt_labels(d.manifest, 1.0, 2), ConfigError);
}

TEST(Datasets, MultiLeadShapesAndLabels) {
  const auto d = generate_synthetic(testutil::mixed_cohort(6, 5));
  const auto idx = select_labels(d.vocab, testutil::task_labels());
  ASSERT_EQ(idx.size(), 4u);
  EXPECT_EQ(select_labels(d.vocab, {}).size(), d.vocab.size());
  EXPECT_THROW(select_labels(d.vocab, {"nope"}), Error);
  const std::vector<std::string> leads{"I", "aVF"};
  const auto ds = make_dataset(d.records, d.manifest, idx, testutil::low_rate_preprocess(125, 2), leads);
  EXPECT_EQ(ds.n, 12u);  // two 2 s windows per 4 s record
  EXPECT_EQ(ds.channels, 2u);
  EXPECT_EQ(ds.length, 250u);
  for (std::size_t i = 0; i < ds.n; ++i)
    for (std::size_t k = 0; k < idx.size(); ++k)
      EXPECT_EQ(ds.labels(i)[k], d.manifest.entries[i / 2].labels.contains(idx[k]) ? 1 : 0);
}

TEST(Datasets, SingleLeadPolicy) {
  const auto d = generate_synthetic(testutil::mixed_cohort(4, 6));
  const auto idx = select_labels(d.vocab, testutil::task_labels());
  auto ds = make_single_lead_dataset(d.records, d.manifest, idx, testutil::low_rate_preprocess(), {0.0, 1});
  ASSERT_EQ(ds.source_channels, 2u);
  ASSERT_EQ(ds.channels, 1u);
  std::vector<float> out(ds.length), expect(ds.sample(0).begin(), ds.sample(0).begin() + ds.length);
  dsp::zscore_inplace(expect);
  for (std::uint64_t key : {std::uint64_t{0}, std::uint64_t{5}, train::kEvalKey}) {
    ds.load(key, 0, out);
    for (std::size_t t = 0; t < ds.length; ++t) ASSERT_NEAR(out[t], expect[t], 1e-5);
  }
  set_lead_policy(ds, {1.0, 3});
  std::vector<float> a(ds.length), b(ds.length);
  ds.load(2, 1, a);
  ds.load(2, 1, b);
  EXPECT_EQ(a, b);
  double mean = 0;
  for (float v : a) mean += v;
  EXPECT_NEAR(mean / double(a.size()), 0.0, 1e-5);
}

TEST(Spec, JsonRoundTripAndValidation) {
  const auto s = tiny_spec(Study::lead_aug);
  const nlohmann::json j = s;
  const auto back = j.get<AblationSpec>();
  EXPECT_EQ(nlohmann::json(back), j);
  const auto partial = nlohmann::json{{"study", "gamma"}, {"n_seeds", 1}}.get<AblationSpec>();
  EXPECT_EQ(partial.grid.size(), 4u);
  EXPECT_EQ(partial.n_seeds, 1u);
  auto bad = s;
  bad.n_seeds = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = s;
  bad.deletion_rate = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(parse_study("vibes"), ConfigError);
}

TEST(Ablation, GammaGridTableAndReproducibility) {
  testutil::TempDir dir("gamma");
  auto spec = tiny_spec(Study::gamma);
  spec.output = dir / "a";
  const auto r = run_ablation(spec);
  EXPECT_TRUE(r.failures.empty());
  for (const auto& variant : {"gamma_0.5", "gamma_1", "gamma_1.5", "gamma_2"}) {
    const auto v = collect(r.rows, variant, "test_macro_auroc");
    ASSERT_EQ(v.size(), 2u) << variant;
    for (double x : v) EXPECT_TRUE(std::isfinite(x));
  }
  spec.output = dir / "b";
  spec.workers = 2;
  run_ablation(spec);
  EXPECT_EQ(slurp(dir / "a" / "results.csv"), slurp(dir / "b" / "results.csv"));
  EXPECT_EQ(slurp(dir / "a" / "results.csv").substr(0, 31), "study,variant,seed,metric,value");
  EXPECT_EQ(results_csv(r.rows), slurp(dir / "a" / "results.csv"));
}

TEST(Ablation, DivergedCellIsRecordedAndStudyContinues) {
  auto spec = tiny_spec(Study::loss);
  spec.n_seeds = 1;
  spec.grid = {Variant{"ok", {}}, Variant{"blowup", {{"train", {{"optimizer", {{"lr0", 1e30}}}}}}}};
  const auto r = run_ablation(spec);
  ASSERT_EQ(r.failures.size(), 1u);
  EXPECT_EQ(r.failures[0].rfind("blowup/0: ", 0), 0u) << r.failures[0];
  EXPECT_EQ(collect(r.rows, "ok", "test_macro_auroc").size(), 1u);
  EXPECT_TRUE(collect(r.rows, "blowup", "test_macro_auroc").empty());
}

TEST(Ablation, LeadAugReportsAxisMetrics) {
  auto spec = tiny_spec(Study::lead_aug);
  spec.n_seeds = 1;
  const auto r = run_ablation(spec);
  EXPECT_TRUE(r.failures.empty());
  for (const char* v : {"lead_i_only", "axis_augmented"}) {
    EXPECT_EQ(collect(r.rows, v, "axis_macro_auroc").size(), 1u);
    EXPECT_EQ(collect(r.rows, v, "axis_macro_auroc_lead_i").size(), 1u);
  }
  EXPECT_TRUE(r.summary.contains("variants") || r.summary.is_object());
}

TEST(Summary, StatisticsOverSeeds) {
  AblationSpec spec = AblationSpec::defaults(Study::loss);
  const std::vector<ResultRow> rows{{"loss", "pu", 0, "m", 1.0}, {"loss", "pu", 1, "m", 3.0},
                                    {"loss", "pu", 2, "m", 2.0}};
  const auto j = summarize(spec, rows, {});
  const auto dumped = j.dump();
  EXPECT_NE(dumped.find("\"median\":2.0"), std::string::npos) << dumped;
  EXPECT_NE(dumped.find("\"mean\":2.0"), std::string::npos) << dumped;
  EXPECT_EQ(collect(rows, "pu", "m"), (std::vector<double>{1.0, 3.0, 2.0}));
}

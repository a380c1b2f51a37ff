#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "ecgf/error.hpp"
#include "ecgf/synth.hpp"

using namespace ecgf;

TEST(Synth, SlowRegularRateIsBradycardia) {
  SynthConfig c;
  c.n_records = 20;
  c.heart_rate_min_bpm = c.heart_rate_max_bpm = 45;
  c.rr_jitter_cv = 0.01;
  const auto d = generate_synthetic(c);
  const auto brady = d.vocab.index("sinus bradycardia");
  for (const auto& e : d.manifest.entries) EXPECT_EQ(e.labels.positives, std::set<std::size_t>{brady});
}

TEST(Synth, LeftAxisGivesNegativeAvfQrs) {
  SynthConfig c;
  c.n_records = 5;
  c.mean_qrs_axis_deg = -45;
  c.noise_mv = 0;
  const auto d = generate_synthetic(c);
  for (const auto& r : d.records) {
    const auto avf = r.lead("aVF");
    const auto it = std::max_element(avf.begin(), avf.end(),
                                     [](float a, float b) { return std::abs(a) < std::abs(b); });
    EXPECT_LT(*it, 0.0f) << r.record_id;
  }
  for (const auto& e : d.manifest.entries) EXPECT_TRUE(e.labels.contains(d.vocab.index("left axis deviation")));
}

TEST(Synth, Deterministic) {
  SynthConfig c;
  c.n_records = 6;
  c.seed = 9;
  c.irregular_fraction = 0.5;
  c.axis_spread_deg = 90;
  const auto a = generate_synthetic(c);
  const auto b = generate_synthetic(c);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_TRUE(bit_equal(a.records[i], b.records[i]));
  EXPECT_EQ(a.manifest, b.manifest);
  c.seed = 10;
  EXPECT_FALSE(bit_equal(a.records[0], generate_synthetic(c).records[0]));
}

TEST(Synth, EinthovenConsistency) {
  SynthConfig c;
  c.n_records = 12;
  c.axis_spread_deg = 120;
  c.irregular_fraction = 0.3;
  c.noise_mv = 0.05;
  for (const auto& r : generate_synthetic(c).records) {
    const auto i = r.lead("I"), ii = r.lead("II"), iii = r.lead("III");
    const auto avr = r.lead("aVR"), avl = r.lead("aVL"), avf = r.lead("aVF");
    double worst = 0;
    for (std::size_t k = 0; k < i.size(); ++k) {
      worst = std::max(worst, std::abs(double(iii[k]) - (double(ii[k]) - double(i[k]))));
      worst = std::max(worst, std::abs(double(avr[k]) + double(avl[k]) + double(avf[k])));
    }
    EXPECT_LT(worst, 1e-6) << r.record_id;
  }
}

TEST(Synth, LabelThresholds) {
  const auto v = synthetic_vocabulary();
  EXPECT_EQ(synthetic_labels(75, 0.02, 60).positives, std::set<std::size_t>{v.index("normal sinus rhythm")});
  EXPECT_TRUE(synthetic_labels(120, 0.02, 60).contains(v.index("sinus tachycardia")));
  EXPECT_TRUE(synthetic_labels(75, 0.25, 60).contains(v.index("atrial fibrillation")));
  EXPECT_TRUE(synthetic_labels(75, 0.02, -31).contains(v.index("left axis deviation")));
  EXPECT_TRUE(synthetic_labels(75, 0.02, 91).contains(v.index("right axis deviation")));
  EXPECT_FALSE(synthetic_labels(75, 0.02, 90).contains(v.index("right axis deviation")));
}

TEST(Synth, ShapesAndPatients) {
  SynthConfig c;
  c.n_records = 7;
  c.fs = 250;
  c.records_per_patient = 3;
  const auto d = generate_synthetic(c);
  for (const auto& r : d.records) {
    EXPECT_EQ(r.n_leads(), 12u);
    EXPECT_EQ(r.n_samples(), 2500u);
    EXPECT_NO_THROW(r.validate());
  }
  EXPECT_EQ(d.records[0].patient_id, d.records[2].patient_id);
  EXPECT_NE(d.records[2].patient_id, d.records[3].patient_id);
}

TEST(Synth, ConfigJsonRoundTripAndValidation) {
  SynthConfig c;
  c.n_records = 3;
  c.heart_rate_min_bpm = 50;
  c.seed = 77;
  const auto back = nlohmann::json(c).get<SynthConfig>();
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(c));
  c.n_records = 0;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
}

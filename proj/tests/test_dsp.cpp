#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include <nlohmann/json.hpp>

#include "ecgf/dsp.hpp"
#include "ecgf/error.hpp"
#include "ecgf/synth.hpp"
#include "test_util.hpp"

using namespace ecgf;
using namespace ecgf::dsp;

namespace {

constexpr double kPi = std::numbers::pi;

// Analog prototypes mapped through the prewarped bilinear transform:
// x = tan(pi f / fs) / tan(pi fc / fs).
double warped_ratio(double f, double fc, double fs) {
  return std::tan(kPi * f / fs) / std::tan(kPi * fc / fs);
}
double lowpass_oracle(double f, double fc, double fs) {
  const double x = warped_ratio(f, fc, fs);
  return 1.0 / std::sqrt(1.0 + std::pow(x, 4));
}
double highpass_oracle(double f, double fc, double fs) {
  const double x = warped_ratio(f, fc, fs);
  return x * x / std::sqrt(1.0 + std::pow(x, 4));
}
double notch_oracle(double f, double f0, double fs, double q) {
  const double x = warped_ratio(f, f0, fs);
  const double num = std::abs(1 - x * x);
  return num / std::sqrt(num * num + (x / q) * (x / q));
}

double rms(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

TEST(Resample, HandInterpolation) {
  const std::vector<double> x{0, 1};
  EXPECT_EQ(resample_linear(x, 1, 2), (std::vector<double>{0, 0.5, 1}));
}

TEST(Resample, IdentityAtSameRate) {
  const auto x = testutil::random_vector(101, 1);
  EXPECT_EQ(resample_linear(x, 360, 360), x);
}

TEST(Resample, SinusoidKeepsFrequencyAndAmplitude) {
  std::vector<double> x(1000);
  for (std::size_t k = 0; k < x.size(); ++k) x[k] = std::sin(2 * kPi * 2 * double(k) / 100);
  const auto y = resample_linear(x, 100, 500);
  EXPECT_EQ(y.size(), 4996u);
  double worst = 0;
  for (std::size_t k = 0; k < y.size(); ++k)
    worst = std::max(worst, std::abs(y[k] - std::sin(2 * kPi * 2 * double(k) / 500)));
  EXPECT_LT(worst, 0.01);
  // Dominant bin of a 5000-sample-rate grid over 4995 samples.
  const std::size_t n = 4500;  // 9 s: integer number of cycles
  std::size_t best_bin = 0;
  double best = 0;
  for (std::size_t b = 1; b < 40; ++b) {
    std::complex<double> acc = 0;
    for (std::size_t k = 0; k < n; ++k) acc += y[k] * std::polar(1.0, -2 * kPi * double(b * k) / double(n));
    if (std::abs(acc) > best) {
      best = std::abs(acc);
      best_bin = b;
    }
  }
  EXPECT_NEAR(double(best_bin) * 500.0 / double(n), 2.0, 1e-9);
}

TEST(Biquad, LowpassCutoffAndDc) {
  const auto c = design_biquad(FilterKind::lowpass, 50, 500);
  EXPECT_NEAR(c.magnitude_db(50), -3.0103, 0.1);
  EXPECT_NEAR(c.magnitude_db(0), 0.0, 1e-6);
}

TEST(Biquad, HighpassDcNull) {
  const auto c = design_biquad(FilterKind::highpass, 0.5, 500);
  EXPECT_LT(std::abs(c.response(0)), 1e-9);
}

TEST(Biquad, Notch) {
  const auto c = design_biquad(FilterKind::notch, 50, 500, 30);
  EXPECT_LE(c.magnitude_db(50), -40);
  EXPECT_GE(c.magnitude_db(10), -0.5);
  EXPECT_GE(c.magnitude_db(200), -0.5);
}

TEST(Biquad, MatchesAnalogOracleAcrossBand) {
  for (double fs : {250.0, 500.0, 1000.0})
    for (double f = 0.25; f < fs / 2; f += fs / 97) {
      EXPECT_NEAR(std::abs(design_biquad(FilterKind::lowpass, 40, fs).response(f)),
                  lowpass_oracle(f, 40, fs), 1e-9);
      EXPECT_NEAR(std::abs(design_biquad(FilterKind::highpass, 0.5, fs).response(f)),
                  highpass_oracle(f, 0.5, fs), 1e-9);
      EXPECT_NEAR(std::abs(design_biquad(FilterKind::notch, 60, fs, 30).response(f)),
                  notch_oracle(f, 60, fs, 30), 1e-9);
    }
}

TEST(Biquad, StableAcrossGrid) {
  for (double fc : {0.5, 1.0, 30.0, 50.0, 60.0})
    for (double fs : {250.0, 360.0, 500.0, 1000.0}) {
      EXPECT_LT(design_biquad(FilterKind::lowpass, fc, fs).max_pole_radius(), 1.0);
      EXPECT_LT(design_biquad(FilterKind::highpass, fc, fs).max_pole_radius(), 1.0);
      EXPECT_LT(design_biquad(FilterKind::notch, fc, fs, 30).max_pole_radius(), 1.0);
    }
}

TEST(Biquad, RejectsBadDesigns) {
  EXPECT_THROW(design_biquad(FilterKind::lowpass, 300, 500), ConfigError);
  EXPECT_THROW(design_biquad(FilterKind::lowpass, 0, 500), ConfigError);
  EXPECT_THROW(design_biquad(FilterKind::notch, 50, 500, 0), ConfigError);
}

TEST(ApplyIir, ImpulseResponseSpectrum) {
  const auto c = design_biquad(FilterKind::lowpass, 50, 500);
  const std::size_t n = 4096;
  std::vector<double> impulse(n, 0.0);
  impulse[0] = 1;
  const auto h = apply_iir(impulse, c);
  for (std::size_t b : {0u, 17u, 205u, 410u, 1000u, 2048u}) {
    std::complex<double> acc = 0;
    for (std::size_t k = 0; k < n; ++k) acc += h[k] * std::polar(1.0, -2 * kPi * double(b * k) / double(n));
    EXPECT_NEAR(std::abs(acc), std::abs(c.response(double(b) * 500.0 / double(n))), 1e-6) << b;
  }
}

TEST(ApplyIir, ZeroInZeroOut) {
  const std::vector<double> z(300, 0.0);
  EXPECT_EQ(apply_iir(z, design_biquad(FilterKind::notch, 50, 500, 30)), z);
}

TEST(ApplyIir, DcRejectedByHighpass) {
  const std::vector<double> dc(5000, 1.0);
  const auto y = apply_iir(dc, design_biquad(FilterKind::highpass, 0.5, 500));
  for (std::size_t k = 4000; k < 5000; ++k) EXPECT_LT(std::abs(y[k]), 0.02);
}

TEST(ApplyIir, Linearity) {
  const auto x = testutil::random_vector(2000, 3), y = testutil::random_vector(2000, 4);
  for (bool zp : {false, true})
    for (auto kind : {FilterKind::lowpass, FilterKind::highpass, FilterKind::notch}) {
      const auto c = design_biquad(kind, 50, 500, 30);
      std::vector<double> mix(x.size());
      for (std::size_t k = 0; k < x.size(); ++k) mix[k] = 2.5 * x[k] - 0.75 * y[k];
      const auto fm = apply_iir(mix, c, zp), fx = apply_iir(x, c, zp), fy = apply_iir(y, c, zp);
      for (std::size_t k = 0; k < x.size(); ++k) EXPECT_NEAR(fm[k], 2.5 * fx[k] - 0.75 * fy[k], 1e-9);
    }
}

TEST(ApplyIir, RejectsNonFinite) {
  std::vector<double> x(10, 0.0);
  x[3] = NAN;
  EXPECT_THROW(apply_iir(x, design_biquad(FilterKind::lowpass, 50, 500)), FormatError);
}

TEST(Segment, Windows) {
  const auto x = testutil::random_vector(12500, 5);
  const auto w = segment_windows(x, 500, 10);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_TRUE(std::equal(w[2].begin(), w[2].begin() + 2500, x.begin() + 10000));
  for (std::size_t k = 2500; k < 5000; ++k) EXPECT_EQ(w[2][k], 0.0);
  EXPECT_EQ(segment_windows(std::vector<double>(5000, 1.0), 500, 10).size(), 1u);
  const auto s = segment_windows(std::vector<double>(3500, 1.0), 500, 10);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0][3499], 1.0);
  EXPECT_EQ(s[0][3500], 0.0);
}

TEST(Segment, CountAndConcatenationProperty) {
  for (std::size_t n : {1u, 7u, 99u, 100u, 101u, 1234u}) {
    const auto x = testutil::random_vector(n, n);
    const auto w = segment_windows(x, 10, 10);
    EXPECT_EQ(w.size(), (n + 99) / 100);
    std::vector<double> cat;
    for (const auto& v : w) cat.insert(cat.end(), v.begin(), v.end());
    cat.resize(n);
    EXPECT_EQ(cat, x);
  }
}

TEST(Zscore, HandValues) {
  const auto z = zscore(std::vector<double>{1, 2, 3});
  EXPECT_NEAR(z[0], -1.224745, 1e-6);
  EXPECT_NEAR(z[1], 0.0, 1e-12);
  EXPECT_NEAR(z[2], 1.224745, 1e-6);
  EXPECT_EQ(zscore(std::vector<double>{5, 5, 5}), (std::vector<double>{0, 0, 0}));
}

TEST(Zscore, MomentsProperty) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto v = testutil::random_vector(500 + 37 * s, s, -3 + double(s), 40);
    std::vector<float> f(v.begin(), v.end());
    zscore_inplace(f);
    double mean = 0, var = 0;
    for (float x : f) mean += x;
    mean /= double(f.size());
    for (float x : f) var += (x - mean) * (x - mean);
    EXPECT_LT(std::abs(mean), 1e-6);
    EXPECT_LT(std::abs(std::sqrt(var / double(f.size())) - 1), 1e-5);
  }
}

namespace {

EcgRecord synth_record(double fs) {
  SynthConfig c;
  c.n_records = 1;
  c.fs = fs;
  return generate_synthetic(c).records[0];
}

}  // namespace

TEST(Preprocess, TwelveLead250Hz) {
  const auto rec = synth_record(250);
  const auto segs = preprocess(rec, PreprocessConfig{}, standard_leads());
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_EQ(segs[0].channels, 12u);
  EXPECT_EQ(segs[0].samples, 5000u);
  for (std::size_t c = 0; c < 12; ++c) {
    const auto ch = segs[0].channel(c);
    double mean = 0, var = 0;
    for (float x : ch) mean += x;
    mean /= double(ch.size());
    for (float x : ch) var += (x - mean) * (x - mean);
    EXPECT_LT(std::abs(mean), 1e-6);
    EXPECT_LT(std::abs(std::sqrt(var / double(ch.size())) - 1), 1e-5);
  }
}

TEST(Preprocess, MissingLeadIsZero) {
  auto rec = synth_record(500);
  rec.lead_names.pop_back();
  rec.data.pop_back();
  const auto segs = preprocess(rec, PreprocessConfig{}, standard_leads());
  for (const auto& s : segs)
    for (float v : s.channel(11)) EXPECT_EQ(v, 0.0f);
}

TEST(Preprocess, MainsInterferenceSuppressed) {
  EcgRecord rec;
  rec.record_id = "mains";
  rec.fs = 500;
  rec.lead_names = {"I"};
  rec.data.assign(1, std::vector<float>(5000));
  for (std::size_t k = 0; k < 5000; ++k) rec.data[0][k] = float(std::sin(2 * kPi * 50 * double(k) / 500 + 0.3));
  const std::vector<std::string> leads{"I"};
  const std::vector<double> in(rec.data[0].begin(), rec.data[0].end());

  // Zero-phase: the whole window, start-up ringing included.
  PreprocessConfig zp;
  zp.zero_phase = true;
  const auto sa = preprocess_unnormalized(rec, zp, leads);
  const auto a = sa[0].channel(0);
  EXPECT_LT(rms(std::vector<double>(a.begin(), a.end())), 0.05 * rms(in));

  // Causal default: once the notch has rung in, the steady state is far below.
  const auto sb = preprocess_unnormalized(rec, PreprocessConfig{}, leads);
  const auto b = sb[0].channel(0);
  EXPECT_LT(rms(std::vector<double>(b.begin() + 1000, b.end())), 0.05 * rms(in));
}

TEST(Preprocess, DeterministicAndIndependent) {
  SynthConfig c;
  c.n_records = 3;
  const auto d = generate_synthetic(c);
  const auto a = preprocess(d.records[1], PreprocessConfig{}, standard_leads());
  const auto b = preprocess(d.records[1], PreprocessConfig{}, standard_leads());
  EXPECT_EQ(a[0].data, b[0].data);
  (void)preprocess(d.records[0], PreprocessConfig{}, standard_leads());
  EXPECT_EQ(preprocess(d.records[1], PreprocessConfig{}, standard_leads())[0].data, a[0].data);
}

TEST(Preprocess, SegmentRecordRoundTrip) {
  const auto segs = preprocess(synth_record(500), PreprocessConfig{}, standard_leads());
  const auto rec = segment_to_record(segs[0], "p", 500);
  const auto back = record_to_segment(rec);
  EXPECT_EQ(back.data, segs[0].data);
  EXPECT_EQ(back.record_id, segs[0].record_id);
  EXPECT_EQ(back.channel_names, segs[0].channel_names);
}

TEST(Preprocess, ConfigValidationAndJson) {
  PreprocessConfig c;
  c.lp_cutoff = 300;
  EXPECT_THROW(c.validate(), ConfigError);
  PreprocessConfig d;
  d.zero_phase = true;
  d.notch_freqs = {60};
  const auto back = nlohmann::json(d).get<PreprocessConfig>();
  EXPECT_TRUE(back.zero_phase);
  EXPECT_EQ(back.notch_freqs, std::vector<double>{60});
  EXPECT_EQ(d.window_samples(), 5000u);
}

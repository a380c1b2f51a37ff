#include "ecgf/synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numbers>

#include <nlohmann/json.hpp>

#include "ecgf/error.hpp"
#include "ecgf/rng.hpp"

namespace ecgf {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kPAxisDeg = 55.0;
constexpr double kTAxisDeg = 35.0;

struct Wavelet {
  double offset_s;  // relative to the R peak
  double sigma_s;
  double amplitude_mv;
  bool along_qrs;   // otherwise uses its own fixed axis
  double axis_deg;
};

// Q, R, S ride on the QRS axis; P and T keep fixed axes.
constexpr Wavelet kP{-0.16, 0.022, 0.15, false, kPAxisDeg};
constexpr Wavelet kQ{-0.025, 0.008, -0.12, true, 0.0};
constexpr Wavelet kR{0.0, 0.011, 1.3, true, 0.0};
constexpr Wavelet kS{0.03, 0.010, -0.30, true, 0.0};
constexpr Wavelet kT{0.30, 0.045, 0.30, false, kTAxisDeg};

// Precordial leads as fixed combinations of the frontal dipole (dx, dy).
constexpr std::array<std::array<double, 2>, 6> kPrecordial{{
    {-0.40, 0.10},
    {-0.20, 0.35},
    {0.15, 0.45},
    {0.50, 0.40},
    {0.75, 0.25},
    {0.85, 0.10},
}};

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void add_wavelet(Dipole& d, double fs, double center_s, double sigma_s, double amplitude,
                 double axis_deg) {
  const auto n = static_cast<std::ptrdiff_t>(d.dx.size());
  const double c = std::cos(axis_deg * kDeg) * amplitude;
  const double s = std::sin(axis_deg * kDeg) * amplitude;
  const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor((center_s - 6 * sigma_s) * fs)));
  const auto hi = std::min<std::ptrdiff_t>(n - 1, static_cast<std::ptrdiff_t>(std::ceil((center_s + 6 * sigma_s) * fs)));
  for (std::ptrdiff_t k = lo; k <= hi; ++k) {
    const double z = (static_cast<double>(k) / fs - center_s) / sigma_s;
    const double g = std::exp(-0.5 * z * z);
    d.dx[k] += c * g;
    d.dy[k] += s * g;
  }
}

}  // namespace

void SynthConfig::validate() const {
  if (n_records == 0) throw ConfigError("n_records must be positive");
  if (!(fs > 0)) throw ConfigError("fs must be positive");
  if (!(duration_s > 0)) throw ConfigError("duration_s must be positive");
  if (!(heart_rate_min_bpm >= 20 && heart_rate_max_bpm <= 250 &&
        heart_rate_min_bpm <= heart_rate_max_bpm))
    throw ConfigError("heart rate range must lie within [20, 250] bpm");
  if (!(rr_jitter_cv >= 0) || !(irregular_cv >= 0)) throw ConfigError("rr_jitter_cv must be >= 0");
  if (!(irregular_fraction >= 0 && irregular_fraction <= 1))
    throw ConfigError("irregular_fraction must lie in [0, 1]");
  if (!(axis_spread_deg >= 0)) throw ConfigError("axis_spread_deg must be >= 0");
  if (!(noise_mv >= 0)) throw ConfigError("noise_mv must be >= 0");
  if (records_per_patient == 0) throw ConfigError("records_per_patient must be positive");
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"n_records", c.n_records},
       {"fs", c.fs},
       {"duration_s", c.duration_s},
       {"heart_rate_bpm", {c.heart_rate_min_bpm, c.heart_rate_max_bpm}},
       {"rr_jitter_cv", c.rr_jitter_cv},
       {"irregular_fraction", c.irregular_fraction},
       {"irregular_cv", c.irregular_cv},
       {"mean_qrs_axis_deg", c.mean_qrs_axis_deg},
       {"axis_spread_deg", c.axis_spread_deg},
       {"noise_mv", c.noise_mv},
       {"records_per_patient", c.records_per_patient},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  SynthConfig d;
  c.n_records = j.value("n_records", d.n_records);
  c.fs = j.value("fs", d.fs);
  c.duration_s = j.value("duration_s", d.duration_s);
  if (j.contains("heart_rate_bpm")) {
    const auto& hr = j.at("heart_rate_bpm");
    if (hr.is_array()) {
      c.heart_rate_min_bpm = hr.at(0).get<double>();
      c.heart_rate_max_bpm = hr.at(1).get<double>();
    } else {
      c.heart_rate_min_bpm = c.heart_rate_max_bpm = hr.get<double>();
    }
  }
  c.rr_jitter_cv = j.value("rr_jitter_cv", d.rr_jitter_cv);
  c.irregular_fraction = j.value("irregular_fraction", d.irregular_fraction);
  c.irregular_cv = j.value("irregular_cv", d.irregular_cv);
  c.mean_qrs_axis_deg = j.value("mean_qrs_axis_deg", d.mean_qrs_axis_deg);
  c.axis_spread_deg = j.value("axis_spread_deg", d.axis_spread_deg);
  c.noise_mv = j.value("noise_mv", d.noise_mv);
  c.records_per_patient = j.value("records_per_patient", d.records_per_patient);
  c.seed = j.value("seed", d.seed);
}

LabelVocabulary synthetic_vocabulary() {
  return LabelVocabulary({"normal sinus rhythm", "sinus bradycardia", "sinus tachycardia",
                          "atrial fibrillation", "left axis deviation", "right axis deviation"});
}

const std::vector<std::string>& standard_leads() {
  static const std::vector<std::string> leads{"I",  "II", "III", "aVR", "aVL", "aVF",
                                              "V1", "V2", "V3",  "V4",  "V5",  "V6"};
  return leads;
}

LabelSet synthetic_labels(double heart_rate_bpm, double rr_cv, double qrs_axis_deg) {
  LabelSet s;
  if (heart_rate_bpm < kBradycardiaBpm)
    s.positives.insert(1);
  else if (heart_rate_bpm > kTachycardiaBpm)
    s.positives.insert(2);
  else
    s.positives.insert(0);
  if (rr_cv > kIrregularCv) s.positives.insert(3);
  if (qrs_axis_deg < kLeftAxisDeg) s.positives.insert(4);
  if (qrs_axis_deg > kRightAxisDeg) s.positives.insert(5);
  return s;
}

Dipole synth_dipole(const SynthRecordParams& params, double fs, double duration_s, Rng& rng) {
  const auto n = static_cast<std::size_t>(std::llround(duration_s * fs));
  Dipole d{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double rr_mean = 60.0 / params.heart_rate_bpm;
  const bool irregular = params.rr_cv > kIrregularCv;
  // Start one beat before the window so wave tails are present at t = 0.
  double t = -rr_mean + uniform01(rng) * rr_mean;
  while (t < duration_s + 0.5) {
    double rr = rr_mean * (1.0 + params.rr_cv * gauss(rng));
    rr = std::clamp(rr, 0.35 * rr_mean, 1.65 * rr_mean);
    rr = std::max(rr, 0.25);
    // QT shortens with rate (Bazett-like scaling of the T offset).
    const double t_offset = kT.offset_s * std::sqrt(std::min(rr_mean, 1.5));
    for (const Wavelet* w : {&kP, &kQ, &kR, &kS, &kT}) {
      if (w == &kP && irregular) continue;
      const double axis = w->along_qrs ? params.qrs_axis_deg : w->axis_deg;
      const double offset = w == &kT ? t_offset : w->offset_s;
      add_wavelet(d, fs, t + offset, w->sigma_s, w->amplitude_mv, axis);
    }
    t += rr;
  }
  if (irregular) {
    // Low-amplitude fibrillatory baseline in place of P waves.
    const double f = 5.0 + uniform01(rng) * 2.0;
    const double phase = uniform01(rng) * 2 * std::numbers::pi;
    const double c = std::cos(kPAxisDeg * kDeg), s = std::sin(kPAxisDeg * kDeg);
    for (std::size_t k = 0; k < n; ++k) {
      const double v = 0.04 * std::sin(2 * std::numbers::pi * f * static_cast<double>(k) / fs + phase);
      d.dx[k] += c * v;
      d.dy[k] += s * v;
    }
  }
  return d;
}

SynthDataset generate_synthetic(const SynthConfig& config) {
  config.validate();
  SynthDataset out;
  out.vocab = synthetic_vocabulary();
  out.records.reserve(config.n_records);

  const double c60 = 0.5, s60 = std::sqrt(3.0) / 2.0;
  char id[32];
  for (std::size_t r = 0; r < config.n_records; ++r) {
    Rng rng(derive_seed(config.seed, {r}));
    std::normal_distribution<double> gauss(0.0, 1.0);

    SynthRecordParams p;
    p.heart_rate_bpm = config.heart_rate_min_bpm +
                       uniform01(rng) * (config.heart_rate_max_bpm - config.heart_rate_min_bpm);
    p.rr_cv = uniform01(rng) < config.irregular_fraction ? config.irregular_cv : config.rr_jitter_cv;
    p.qrs_axis_deg = config.mean_qrs_axis_deg + (2 * uniform01(rng) - 1) * config.axis_spread_deg;

    const Dipole d = synth_dipole(p, config.fs, config.duration_s, rng);
    const std::size_t n = d.dx.size();

    EcgRecord rec;
    std::snprintf(id, sizeof(id), "syn%06zu", r);
    rec.record_id = id;
    std::snprintf(id, sizeof(id), "p%06zu", r / config.records_per_patient);
    rec.patient_id = id;
    rec.fs = config.fs;
    rec.lead_names = standard_leads();
    rec.data.assign(12, std::vector<float>(n));
    rec.meta = {{"heart_rate_bpm", format_double(p.heart_rate_bpm)},
                {"rr_cv", format_double(p.rr_cv)},
                {"qrs_axis_deg", format_double(p.qrs_axis_deg)},
                {"source", "synthetic dipole"}};

    for (std::size_t k = 0; k < n; ++k) {
      // Leads I and II are measured (with noise); the other limb leads follow
      // from the Einthoven and Goldberger relations.
      const double lead_i = static_cast<double>(static_cast<float>(d.dx[k] + config.noise_mv * gauss(rng)));
      const double lead_ii = static_cast<double>(
          static_cast<float>(c60 * d.dx[k] + s60 * d.dy[k] + config.noise_mv * gauss(rng)));
      rec.data[0][k] = static_cast<float>(lead_i);
      rec.data[1][k] = static_cast<float>(lead_ii);
      rec.data[2][k] = static_cast<float>(lead_ii - lead_i);
      rec.data[3][k] = static_cast<float>(-0.5 * (lead_i + lead_ii));
      rec.data[4][k] = static_cast<float>(lead_i - 0.5 * lead_ii);
      rec.data[5][k] = static_cast<float>(lead_ii - 0.5 * lead_i);
      for (std::size_t v = 0; v < 6; ++v)
        rec.data[6 + v][k] = static_cast<float>(kPrecordial[v][0] * d.dx[k] +
                                                kPrecordial[v][1] * d.dy[k] +
                                                config.noise_mv * gauss(rng));
    }

    ManifestEntry e;
    e.path = "records/" + rec.record_id + ".ecgb";
    e.record_id = rec.record_id;
    e.patient_id = rec.patient_id;
    e.labels = synthetic_labels(p.heart_rate_bpm, p.rr_cv, p.qrs_axis_deg);
    out.manifest.entries.push_back(std::move(e));
    out.records.push_back(std::move(rec));
  }
  return out;
}

}  // namespace ecgf

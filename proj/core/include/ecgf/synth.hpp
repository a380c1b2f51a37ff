#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ecgf/recordio.hpp"
#include "ecgf/rng.hpp"

namespace ecgf {

/// Synthetic cohort description. Per-record heart rate and QRS axis are drawn
/// uniformly from the given ranges; a fraction of records can be made
/// irregular to exercise the rhythm label.
struct SynthConfig {
  std::size_t n_records = 64;
  double fs = 500.0;
  double duration_s = 10.0;
  double heart_rate_min_bpm = 60.0;
  double heart_rate_max_bpm = 100.0;
  double rr_jitter_cv = 0.02;
  double irregular_fraction = 0.0;
  double irregular_cv = 0.25;
  double mean_qrs_axis_deg = 60.0;
  double axis_spread_deg = 0.0;
  double noise_mv = 0.01;
  std::size_t records_per_patient = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

// Label thresholds used by the generator.
inline constexpr double kBradycardiaBpm = 60.0;
inline constexpr double kTachycardiaBpm = 100.0;
inline constexpr double kIrregularCv = 0.15;
inline constexpr double kLeftAxisDeg = -30.0;
inline constexpr double kRightAxisDeg = 90.0;

/// normal sinus rhythm, sinus bradycardia, sinus tachycardia,
/// atrial fibrillation, left axis deviation, right axis deviation.
LabelVocabulary synthetic_vocabulary();

/// The 12 standard lead names in conventional order.
const std::vector<std::string>& standard_leads();

/// Ground-truth labels for one record's generating parameters.
LabelSet synthetic_labels(double heart_rate_bpm, double rr_cv, double qrs_axis_deg);

/// Frontal dipole sampled at fs: x toward lead I, y toward aVF.
struct Dipole {
  std::vector<double> dx;
  std::vector<double> dy;
};

struct SynthRecordParams {
  double heart_rate_bpm;
  double rr_cv;
  double qrs_axis_deg;
};

/// Dipole train for one record. P and T waves keep fixed axes; the QRS
/// complex points along qrs_axis_deg. Irregular records have no P waves.
Dipole synth_dipole(const SynthRecordParams& params, double fs, double duration_s, Rng& rng);

struct SynthDataset {
  std::vector<EcgRecord> records;
  Manifest manifest;
  LabelVocabulary vocab;
};

SynthDataset generate_synthetic(const SynthConfig& config);

}  // namespace ecgf

#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ecgf/recordio.hpp"

namespace ecgf::dsp {

enum class FilterKind { lowpass, highpass, notch };

/// Second-order section with a0 normalized to 1:
/// H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2).
struct BiquadCoeffs {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
  FilterKind kind = FilterKind::lowpass;
  double fc = 0;
  double fs = 0;
  double q = 0;

  /// Largest pole magnitude; < 1 means stable.
  double max_pole_radius() const;
  std::complex<double> response(double freq_hz) const;
  double magnitude_db(double freq_hz) const;
};

/// Butterworth low/high-pass (Q = 1/sqrt(2)) or band-reject notch, designed by
/// the bilinear transform with prewarping at fc.
BiquadCoeffs design_biquad(FilterKind kind, double fc, double fs, double q = 0.0);

/// Transposed direct-form II with zero initial state. With zero_phase the
/// filter runs forward then backward.
std::vector<double> apply_iir(std::span<const double> series, const BiquadCoeffs& coeffs,
                              bool zero_phase = false);

/// Linear interpolation onto a grid of spacing 1/fs_out starting at t = 0;
/// output length floor((n - 1) * fs_out / fs_in) + 1.
std::vector<double> resample_linear(std::span<const double> series, double fs_in, double fs_out);

/// Consecutive non-overlapping windows of round(window_s * fs) samples; the
/// remainder is zero-padded into a final window.
std::vector<std::vector<double>> segment_windows(std::span<const double> series, double fs,
                                                 double window_s);

/// Population z-score. Channels with std < 1e-8 become all zeros.
std::vector<double> zscore(std::span<const double> channel);
void zscore_inplace(std::span<float> channel);

struct PreprocessConfig {
  double target_fs = 500.0;
  double hp_cutoff = 0.5;
  double lp_cutoff = 50.0;
  std::vector<double> notch_freqs{50.0, 60.0};
  double notch_q = 30.0;
  double window_s = 10.0;
  bool zero_phase = false;

  void validate() const;
  std::size_t window_samples() const;
};

void to_json(nlohmann::json& j, const PreprocessConfig& c);
void from_json(const nlohmann::json& j, PreprocessConfig& c);

/// A normalized fixed-length window: channels x samples, channel-major.
struct Segment {
  std::size_t channels = 0;
  std::size_t samples = 0;
  std::vector<float> data;
  std::vector<std::string> channel_names;
  std::string record_id;
  std::size_t window_index = 0;

  std::span<float> channel(std::size_t c) { return {data.data() + c * samples, samples}; }
  std::span<const float> channel(std::size_t c) const {
    return {data.data() + c * samples, samples};
  }
};

/// Resample and filter one lead (pipeline steps 1-4).
std::vector<double> filter_lead(std::span<const double> series, double fs,
                                const PreprocessConfig& cfg);

/// Full pipeline without the final z-score: resample, high-pass, low-pass,
/// notches, lead arrangement with zero fill, windowing.
std::vector<Segment> preprocess_unnormalized(const EcgRecord& record, const PreprocessConfig& cfg,
                                             std::span<const std::string> required_leads);

/// preprocess_unnormalized followed by a per-channel z-score of every window.
std::vector<Segment> preprocess(const EcgRecord& record, const PreprocessConfig& cfg,
                                std::span<const std::string> required_leads);

/// Segment <-> ECGB record (fs = target_fs, window index kept in meta).
EcgRecord segment_to_record(const Segment& segment, const std::string& patient_id, double fs);
Segment record_to_segment(const EcgRecord& record);

}  // namespace ecgf::dsp

#include "ecgf/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "ecgf/error.hpp"

namespace ecgf::dsp {

namespace {

constexpr double kPi = std::numbers::pi;

std::size_t resampled_length(std::size_t n_in, double fs_in, double fs_out) {
  if (n_in <= 1 || fs_in == fs_out) return n_in;
  const double span = static_cast<double>(n_in - 1) * fs_out / fs_in;
  return static_cast<std::size_t>(std::floor(span + 1e-9)) + 1;
}

void run_tdf2(std::span<double> y, const BiquadCoeffs& c) {
  double s1 = 0, s2 = 0;
  for (auto& v : y) {
    const double x = v;
    const double out = c.b0 * x + s1;
    s1 = c.b1 * x - c.a1 * out + s2;
    s2 = c.b2 * x - c.a2 * out;
    v = out;
  }
}

}  // namespace

double BiquadCoeffs::max_pole_radius() const {
  // Roots of z^2 + a1 z + a2.
  const double disc = a1 * a1 - 4 * a2;
  if (disc < 0) return std::sqrt(a2);
  const double r = std::sqrt(disc);
  return std::max(std::abs((-a1 + r) / 2), std::abs((-a1 - r) / 2));
}

std::complex<double> BiquadCoeffs::response(double freq_hz) const {
  const double w = 2 * kPi * freq_hz / fs;
  const std::complex<double> z1 = std::polar(1.0, -w);
  const std::complex<double> z2 = z1 * z1;
  return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
}

double BiquadCoeffs::magnitude_db(double freq_hz) const {
  return 20 * std::log10(std::abs(response(freq_hz)));
}

BiquadCoeffs design_biquad(FilterKind kind, double fc, double fs, double q) {
  if (!(fs > 0)) throw ConfigError("sampling rate must be positive");
  if (!(fc > 0)) throw ConfigError("cutoff must be positive");
  if (fc >= fs / 2) throw ConfigError("cutoff at or above Nyquist");

  BiquadCoeffs c;
  c.kind = kind;
  c.fc = fc;
  c.fs = fs;
  if (kind != FilterKind::notch) q = 1.0 / std::numbers::sqrt2;
  if (!(q > 0)) throw ConfigError("notch quality factor must be positive");
  c.q = q;

  // Prewarped bilinear transform of the analog second-order prototype.
  const double k = std::tan(kPi * fc / fs);
  const double k2 = k * k;
  const double norm = 1.0 / (1.0 + k / q + k2);
  c.a1 = 2.0 * (k2 - 1.0) * norm;
  c.a2 = (1.0 - k / q + k2) * norm;
  switch (kind) {
    case FilterKind::lowpass:
      c.b0 = k2 * norm;
      c.b1 = 2.0 * c.b0;
      c.b2 = c.b0;
      break;
    case FilterKind::highpass:
      c.b0 = norm;
      c.b1 = -2.0 * norm;
      c.b2 = norm;
      break;
    case FilterKind::notch:
      c.b0 = (1.0 + k2) * norm;
      c.b1 = c.a1;
      c.b2 = c.b0;
      break;
  }
  return c;
}

std::vector<double> apply_iir(std::span<const double> series, const BiquadCoeffs& coeffs,
                              bool zero_phase) {
  for (double v : series)
    if (!std::isfinite(v)) throw FormatError("non-finite sample in filter input");
  std::vector<double> y(series.begin(), series.end());
  run_tdf2(y, coeffs);
  if (zero_phase) {
    std::reverse(y.begin(), y.end());
    run_tdf2(y, coeffs);
    std::reverse(y.begin(), y.end());
  }
  return y;
}

std::vector<double> resample_linear(std::span<const double> series, double fs_in, double fs_out) {
  if (!(fs_in > 0) || !(fs_out > 0)) throw ConfigError("sampling rates must be positive");
  const std::size_t n_in = series.size();
  if (n_in <= 1 || fs_in == fs_out) return {series.begin(), series.end()};

  const std::size_t n_out = resampled_length(n_in, fs_in, fs_out);
  const double step = fs_in / fs_out;
  std::vector<double> out(n_out);
  for (std::size_t k = 0; k < n_out; ++k) {
    const double t = static_cast<double>(k) * step;
    auto i = static_cast<std::size_t>(std::floor(t));
    if (i >= n_in - 1) {
      out[k] = series[n_in - 1];
      continue;
    }
    const double frac = t - static_cast<double>(i);
    out[k] = series[i] + frac * (series[i + 1] - series[i]);
  }
  return out;
}

std::vector<std::vector<double>> segment_windows(std::span<const double> series, double fs,
                                                 double window_s) {
  if (!(fs > 0)) throw ConfigError("sampling rate must be positive");
  if (!(window_s > 0)) throw ConfigError("window length must be positive");
  const auto w = static_cast<std::size_t>(std::llround(window_s * fs));
  if (w == 0) throw ConfigError("window shorter than one sample");
  std::vector<std::vector<double>> out;
  for (std::size_t start = 0; start < series.size(); start += w) {
    const std::size_t end = std::min(series.size(), start + w);
    std::vector<double> win(w, 0.0);
    std::copy(series.begin() + static_cast<std::ptrdiff_t>(start),
              series.begin() + static_cast<std::ptrdiff_t>(end), win.begin());
    out.push_back(std::move(win));
  }
  return out;
}

namespace {

template <typename T>
void zscore_span(std::span<const T> in, std::span<T> out) {
  const std::size_t n = in.size();
  if (n == 0) return;
  double mean = 0;
  for (T v : in) mean += static_cast<double>(v);
  mean /= static_cast<double>(n);
  double var = 0;
  for (T v : in) {
    const double d = static_cast<double>(v) - mean;
    var += d * d;
  }
  const double sd = std::sqrt(var / static_cast<double>(n));
  if (sd < 1e-8) {
    std::fill(out.begin(), out.end(), T{0});
    return;
  }
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>((static_cast<double>(in[i]) - mean) / sd);
}

}  // namespace

std::vector<double> zscore(std::span<const double> channel) {
  std::vector<double> out(channel.size());
  zscore_span<double>(channel, out);
  return out;
}

void zscore_inplace(std::span<float> channel) {
  std::vector<float> copy(channel.begin(), channel.end());
  zscore_span<float>(copy, channel);
}

void PreprocessConfig::validate() const {
  if (!(target_fs > 0)) throw ConfigError("target_fs must be positive");
  if (!(hp_cutoff > 0 && hp_cutoff < lp_cutoff && lp_cutoff < target_fs / 2))
    throw ConfigError("cutoffs must satisfy 0 < hp_cutoff < lp_cutoff < target_fs/2");
  for (double f : notch_freqs)
    if (!(f > 0 && f < target_fs / 2)) throw ConfigError("notch frequency outside (0, target_fs/2)");
  if (!(notch_q > 0)) throw ConfigError("notch_q must be positive");
  if (!(window_s > 0)) throw ConfigError("window_s must be positive");
}

std::size_t PreprocessConfig::window_samples() const {
  return static_cast<std::size_t>(std::llround(window_s * target_fs));
}

void to_json(nlohmann::json& j, const PreprocessConfig& c) {
  j = {{"target_fs", c.target_fs}, {"hp_cutoff", c.hp_cutoff}, {"lp_cutoff", c.lp_cutoff},
       {"notch_freqs", c.notch_freqs}, {"notch_q", c.notch_q}, {"window_s", c.window_s},
       {"zero_phase", c.zero_phase}};
}

void from_json(const nlohmann::json& j, PreprocessConfig& c) {
  PreprocessConfig d;
  c.target_fs = j.value("target_fs", d.target_fs);
  c.hp_cutoff = j.value("hp_cutoff", d.hp_cutoff);
  c.lp_cutoff = j.value("lp_cutoff", d.lp_cutoff);
  c.notch_freqs = j.value("notch_freqs", d.notch_freqs);
  c.notch_q = j.value("notch_q", d.notch_q);
  c.window_s = j.value("window_s", d.window_s);
  c.zero_phase = j.value("zero_phase", d.zero_phase);
}

std::vector<double> filter_lead(std::span<const double> series, double fs,
                                const PreprocessConfig& cfg) {
  auto x = resample_linear(series, fs, cfg.target_fs);
  x = apply_iir(x, design_biquad(FilterKind::highpass, cfg.hp_cutoff, cfg.target_fs), cfg.zero_phase);
  x = apply_iir(x, design_biquad(FilterKind::lowpass, cfg.lp_cutoff, cfg.target_fs), cfg.zero_phase);
  for (double f : cfg.notch_freqs)
    x = apply_iir(x, design_biquad(FilterKind::notch, f, cfg.target_fs, cfg.notch_q), cfg.zero_phase);
  return x;
}

std::vector<Segment> preprocess_unnormalized(const EcgRecord& record, const PreprocessConfig& cfg,
                                             std::span<const std::string> required_leads) {
  record.validate();
  cfg.validate();
  if (required_leads.empty()) throw ConfigError("no required leads given");

  const std::size_t n = resampled_length(record.n_samples(), record.fs, cfg.target_fs);
  std::vector<std::vector<double>> channels;
  bool any = false;
  for (const auto& name : required_leads) {
    if (auto idx = record.lead_index(name)) {
      const auto& raw = record.data[*idx];
      std::vector<double> series(raw.begin(), raw.end());
      channels.push_back(filter_lead(series, record.fs, cfg));
      any = true;
    } else {
      channels.emplace_back(n, 0.0);
    }
  }
  if (!any) throw FormatError("no usable leads in record " + record.record_id);

  const std::size_t w = cfg.window_samples();
  const std::size_t n_windows = (n + w - 1) / w;
  std::vector<Segment> out(n_windows);
  for (std::size_t k = 0; k < n_windows; ++k) {
    Segment& s = out[k];
    s.channels = channels.size();
    s.samples = w;
    s.data.assign(s.channels * w, 0.0f);
    s.channel_names.assign(required_leads.begin(), required_leads.end());
    s.record_id = record.record_id;
    s.window_index = k;
  }
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const auto windows = segment_windows(channels[c], cfg.target_fs, cfg.window_s);
    for (std::size_t k = 0; k < windows.size(); ++k)
      std::transform(windows[k].begin(), windows[k].end(), out[k].channel(c).begin(),
                     [](double v) { return static_cast<float>(v); });
  }
  return out;
}

std::vector<Segment> preprocess(const EcgRecord& record, const PreprocessConfig& cfg,
                                std::span<const std::string> required_leads) {
  auto segments = preprocess_unnormalized(record, cfg, required_leads);
  for (auto& s : segments)
    for (std::size_t c = 0; c < s.channels; ++c) zscore_inplace(s.channel(c));
  return segments;
}

EcgRecord segment_to_record(const Segment& segment, const std::string& patient_id, double fs) {
  EcgRecord r;
  r.record_id = segment.record_id + "_w" + std::to_string(segment.window_index);
  r.patient_id = patient_id;
  r.fs = fs;
  r.lead_names = segment.channel_names;
  r.data.resize(segment.channels);
  for (std::size_t c = 0; c < segment.channels; ++c) {
    const auto ch = segment.channel(c);
    r.data[c].assign(ch.begin(), ch.end());
  }
  r.meta = {{"source_record_id", segment.record_id},
            {"window_index", std::to_string(segment.window_index)}};
  return r;
}

Segment record_to_segment(const EcgRecord& record) {
  record.validate();
  Segment s;
  s.channels = record.n_leads();
  s.samples = record.n_samples();
  s.channel_names = record.lead_names;
  s.data.reserve(s.channels * s.samples);
  for (const auto& series : record.data) s.data.insert(s.data.end(), series.begin(), series.end());
  auto src = record.meta.find("source_record_id");
  s.record_id = src != record.meta.end() ? src->second : record.record_id;
  auto win = record.meta.find("window_index");
  s.window_index = win != record.meta.end() ? std::stoull(win->second) : 0;
  return s;
}

}  // namespace ecgf::dsp

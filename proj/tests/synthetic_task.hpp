#pragma once

#include <string>
#include <vector>

#include "ecgf/experiments.hpp"
#include "ecgf/synth.hpp"

namespace ecgf::testutil {

/// Labels every small task uses: rate and axis classes that are learnable
/// from a few seconds of signal.
inline std::vector<std::string> task_labels() {
  return {"sinus bradycardia", "sinus tachycardia", "left axis deviation", "right axis deviation"};
}

inline SynthConfig mixed_cohort(std::size_t n, std::uint64_t seed, double fs = 125, double duration_s = 4) {
  SynthConfig c;
  c.n_records = n;
  c.fs = fs;
  c.duration_s = duration_s;
  c.heart_rate_min_bpm = 40;
  c.heart_rate_max_bpm = 140;
  c.irregular_fraction = 0.2;
  c.mean_qrs_axis_deg = 30;
  c.axis_spread_deg = 100;
  c.seed = seed;
  return c;
}

inline dsp::PreprocessConfig low_rate_preprocess(double fs = 125, double window_s = 4) {
  dsp::PreprocessConfig p;
  p.target_fs = fs;
  p.lp_cutoff = 30;
  p.notch_freqs = {50};
  p.window_s = window_s;
  return p;
}

struct SmallTask {
  SynthDataset data;
  std::vector<std::size_t> label_index;
  train::Dataset train, valid;
};

/// Two disjoint synthetic cohorts with `leads` at 125 Hz, 4 s windows.
inline SmallTask small_task(std::size_t n_train, std::size_t n_valid, std::uint64_t seed,
                            std::vector<std::string> leads = {"I", "II", "V1"}) {
  SmallTask t;
  const auto pre = low_rate_preprocess();
  t.data = generate_synthetic(mixed_cohort(n_train, seed));
  t.label_index = experiments::select_labels(t.data.vocab, task_labels());
  t.train = experiments::make_dataset(t.data.records, t.data.manifest, t.label_index, pre, leads);
  const auto held = generate_synthetic(mixed_cohort(n_valid, seed + 1000));
  t.valid = experiments::make_dataset(held.records, held.manifest, t.label_index, pre, leads);
  return t;
}

inline nn::ModelConfig small_model(int in_channels, int n_classes) {
  return nn::ModelConfig::micro(in_channels, n_classes);
}

}  // namespace ecgf::testutil

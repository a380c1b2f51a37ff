#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgf/dsp.hpp"
#include "ecgf/hexaxial.hpp"
#include "ecgf/recordio.hpp"
#include "ecgf/synth.hpp"
#include "ecgf/trainer.hpp"

namespace ecgf::experiments {

/// Hides each positive label independently with probability `deletion_rate`.
/// Hidden labels become unlabeled; negatives are never touched.
Manifest corrupt_labels(const Manifest& manifest, double deletion_rate, std::uint64_t seed);

std::size_t count_positives(const Manifest& manifest);

/// Indices of `names` in `vocab`; empty `names` selects the whole vocabulary.
std::vector<std::size_t> select_labels(const LabelVocabulary& vocab,
                                       const std::vector<std::string>& names);

/// Preprocessed multi-lead windows. Every window inherits its record's
/// labels restricted to `label_index`. Records are matched by record_id.
train::Dataset make_dataset(const std::vector<EcgRecord>& records, const Manifest& manifest,
                            std::span<const std::size_t> label_index,
                            const dsp::PreprocessConfig& cfg,
                            std::span<const std::string> leads);

/// Single-lead view: stores filtered, unnormalized leads I and II; each load
/// derives one frontal lead chosen by `policy` and z-scores it.
train::Dataset make_single_lead_dataset(const std::vector<EcgRecord>& records,
                                        const Manifest& manifest,
                                        std::span<const std::size_t> label_index,
                                        const dsp::PreprocessConfig& cfg,
                                        const hexaxial::AugmentPolicy& policy);

/// Replaces the transform of a single-lead dataset.
void set_lead_policy(train::Dataset& data, const hexaxial::AugmentPolicy& policy);

enum class Study { loss, gamma, lead_aug, scale };

std::string_view to_string(Study s);
Study parse_study(std::string_view name);

struct Variant {
  std::string name;
  /// Merge-patch applied to {"train": ..., "model": ..., "lead_aug": ...,
  /// "data": ...} before the run.
  nlohmann::json overrides = nlohmann::json::object();
};

struct AblationSpec {
  Study study = Study::loss;
  std::vector<Variant> grid;
  std::size_t n_seeds = 3;
  double deletion_rate = 0.4;
  std::uint64_t seed = 0;
  SynthConfig synth;
  dsp::PreprocessConfig preprocess;
  SplitRatios split;
  std::vector<std::string> labels;
  std::string model_preset = "micro";
  train::TrainConfig train;
  /// Probability of a derived lead during single-lead training.
  double lead_aug_p = 0.5;
  std::size_t workers = 1;
  std::size_t n_boot = 0;
  std::filesystem::path output;

  void validate() const;
  /// Desk-scale defaults for each study.
  static AblationSpec defaults(Study study);
};

void to_json(nlohmann::json& j, const AblationSpec& s);
/// Missing keys keep the defaults of the named study.
void from_json(const nlohmann::json& j, AblationSpec& s);

struct ResultRow {
  std::string study;
  std::string variant;
  std::size_t seed = 0;
  std::string metric;
  double value = 0;
};

struct AblationResult {
  std::vector<ResultRow> rows;
  /// "variant/seed: message" for runs that diverged or failed.
  std::vector<std::string> failures;
  nlohmann::json summary;
};

AblationResult run_ablation(const AblationSpec& spec);

std::string results_csv(std::span<const ResultRow> rows);

/// Per variant and metric: mean, median, min, max over seeds.
nlohmann::json summarize(const AblationSpec& spec, std::span<const ResultRow> rows,
                         std::span<const std::string> failures);

/// Value of `metric` for `variant` at each seed (seed order).
std::vector<double> collect(std::span<const ResultRow> rows, std::string_view variant,
                            std::string_view metric);

}  // namespace ecgf::experiments

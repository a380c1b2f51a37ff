#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgf/error.hpp"
#include "ecgf/nnet.hpp"
#include "ecgf/optim.hpp"
#include "ecgf/puloss.hpp"

namespace ecgf::train {

enum class FinetuneMode { none, linear_probe, full };

std::string_view to_string(FinetuneMode mode);
FinetuneMode parse_finetune_mode(std::string_view name);

struct TrainConfig {
  loss::LossConfig loss;
  double lr0 = 1e-3;
  ScheduleConfig schedule;
  double min_lr = 1e-5;
  std::size_t max_epochs = 20;
  std::size_t batch_size = 64;
  /// Epochs without a validation-loss improvement before stopping; 0 = never.
  std::size_t early_stop_patience = 5;
  AdamWConfig adam;
  std::uint64_t seed = 0;
  FinetuneMode finetune_mode = FinetuneMode::none;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;

  /// Fine-tuning defaults: plateau schedule (patience 10), 30 epochs,
  /// min_lr 1e-6.
  static TrainConfig finetune_defaults(FinetuneMode mode);
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// In-memory supervised set. Samples are stored with `source_channels`
/// channels; when `transform` is set it maps a stored sample to the model
/// input (`channels` x `length`) using a stream keyed by (key, index), where
/// key is the epoch during training.
struct Dataset {
  std::size_t n = 0;
  std::size_t source_channels = 0;
  std::size_t channels = 0;
  std::size_t length = 0;
  std::size_t n_labels = 0;
  std::vector<float> x;           // n x source_channels x length
  std::vector<std::uint8_t> y;    // n x n_labels
  std::vector<std::string> ids;

  using Transform = std::function<void(std::uint64_t key, std::size_t index,
                                       std::span<const float> source, std::span<float> out)>;
  Transform transform;

  void validate() const;
  std::span<const float> sample(std::size_t i) const {
    return {x.data() + i * source_channels * length, source_channels * length};
  }
  std::span<const std::uint8_t> labels(std::size_t i) const {
    return {y.data() + i * n_labels, n_labels};
  }
  /// Copies sample i into `out` (channels x length), applying the transform.
  void load(std::uint64_t key, std::size_t i, std::span<float> out) const;
};

/// Key used for every non-training pass over a transformed dataset.
inline constexpr std::uint64_t kEvalKey = ~std::uint64_t{0};

struct HistoryRow {
  std::size_t epoch = 0;
  double train_loss = 0;
  double valid_loss = 0;
  double valid_auroc = 0;  // NaN when undefined
  double lr = 0;

  bool operator==(const HistoryRow& o) const;
};

std::string history_csv(std::span<const HistoryRow> history);

template <typename T>
struct Checkpoint {
  TrainConfig train_config;
  nn::Model<T> model;
  OptimizerState<T> optimizer;
  /// Completed epochs.
  std::size_t epoch = 0;
  double best_auroc = -1;
  std::size_t best_epoch = 0;
  std::vector<HistoryRow> history;
  /// Textual state of the shuffling engine.
  std::string rng_state;
  /// Free-form provenance (e.g. the pretraining run for a fine-tune).
  nlohmann::json extra = nlohmann::json::object();
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::filesystem::path& path);
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

/// Header JSON and array directory of a checkpoint file, without payloads.
nlohmann::json inspect_checkpoint(const std::filesystem::path& path);
/// "f32" or "f64".
std::string checkpoint_precision(const std::filesystem::path& path);

template <typename T>
bool bit_equal(const Checkpoint<T>& a, const Checkpoint<T>& b);

/// Thrown when a loss or gradient turns non-finite; carries the last
/// checkpoint taken at an epoch boundary.
template <typename T>
class TrainingDiverged : public DivergenceError {
 public:
  TrainingDiverged(const std::string& what, std::shared_ptr<const Checkpoint<T>> last_good)
      : DivergenceError(what), last_good_(std::move(last_good)) {}
  const Checkpoint<T>& last_good() const { return *last_good_; }

 private:
  std::shared_ptr<const Checkpoint<T>> last_good_;
};

template <typename T>
struct TrainResult {
  Checkpoint<T> best;  // highest validation macro-AUROC seen in this call
  /// False when no epoch of this call improved on start.best_auroc; `best`
  /// then equals `last`.
  bool best_updated = false;
  Checkpoint<T> last;
  std::vector<HistoryRow> history;
};

using EpochCallback = std::function<void(const HistoryRow&)>;

/// Fresh optimizer state at epoch 0 for `model`.
template <typename T>
Checkpoint<T> initial_checkpoint(nn::Model<T> model, const TrainConfig& cfg);

/// Runs epochs ckpt.epoch .. cfg.max_epochs - 1 starting from `start`
/// (a fresh initial_checkpoint or a saved `last`). Linear probing trains only
/// the head on features precomputed once in evaluation mode.
template <typename T>
TrainResult<T> train(Checkpoint<T> start, const Dataset& train_set, const Dataset& valid_set,
                     const EpochCallback& on_epoch = {});

/// Replaces the head of a pretrained model with a fresh one of `n_classes`
/// outputs and trains it with cfg.finetune_mode.
template <typename T>
TrainResult<T> finetune(const Checkpoint<T>& pretrained, int n_classes, const TrainConfig& cfg,
                        const Dataset& train_set, const Dataset& valid_set,
                        const EpochCallback& on_epoch = {});

/// Sigmoid probabilities, n x n_classes, evaluation mode.
template <typename T>
std::vector<double> predict(const nn::Model<T>& model, const Dataset& data,
                            std::size_t batch_size = 64);

/// Pooled features, n x feature_width, evaluation mode.
template <typename T>
std::vector<T> extract_features(const nn::Model<T>& model, const Dataset& data,
                                std::size_t batch_size = 64);

/// Arrays that receive updates in each mode (one flag per parameter array).
std::vector<std::uint8_t> trainable_mask(const nn::ModelConfig& config,
                                         const std::vector<std::string>& names, FinetuneMode mode);

}  // namespace ecgf::train

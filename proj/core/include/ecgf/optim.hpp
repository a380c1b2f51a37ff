#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>

#include <nlohmann/json_fwd.hpp>

#include "ecgf/nnet.hpp"

namespace ecgf::train {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.1;

  void validate() const;
  bool operator==(const AdamWConfig&) const = default;
};

template <typename T>
struct OptimizerState {
  AdamWConfig config;
  nn::ParamStore<T> m;
  nn::ParamStore<T> v;
  std::uint64_t step = 0;

  bool operator==(const OptimizerState&) const = default;
};

template <typename T>
OptimizerState<T> make_optimizer(const nn::ParamStore<T>& params, const AdamWConfig& config);

/// Decoupled decay theta -= lr * wd * theta, then the bias-corrected Adam
/// update. `trainable` (one flag per array, empty = all) excludes arrays from
/// both. Throws DivergenceError("diverged") on a non-finite gradient, before
/// touching any state.
template <typename T>
void adamw_step(nn::ParamStore<T>& params, const nn::ParamStore<T>& grads,
                OptimizerState<T>& state, double lr,
                std::span<const std::uint8_t> trainable = {});

enum class ScheduleKind { step, plateau };

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::step;
  std::size_t period_epochs = 5;
  double factor = 0.1;
  std::size_t patience_epochs = 10;

  bool operator==(const ScheduleConfig&) const = default;
};

void to_json(nlohmann::json& j, const ScheduleConfig& c);
void from_json(const nlohmann::json& j, ScheduleConfig& c);

/// Learning rate for `epoch`. For plateau schedules `history` holds the
/// monitored metric of every completed epoch before `epoch` (higher is
/// better); the schedule is a pure replay of it.
double schedule_lr(const ScheduleConfig& schedule, double lr0, double min_lr, std::size_t epoch,
                   std::span<const double> history = {});

/// Stops once the monitored loss has not strictly improved for `patience`
/// consecutive epochs. Patience 0 disables stopping.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Returns true when training should stop after this epoch.
  bool update(double loss);
  std::size_t bad_epochs() const noexcept { return bad_; }
  double best() const noexcept { return best_; }

 private:
  std::size_t patience_;
  std::size_t bad_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

}  // namespace ecgf::train

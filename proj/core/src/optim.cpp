#include "ecgf/optim.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "ecgf/error.hpp"

namespace ecgf::train {

void AdamWConfig::validate() const {
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("adam eps must be positive");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
}

template <typename T>
OptimizerState<T> make_optimizer(const nn::ParamStore<T>& params, const AdamWConfig& config) {
  config.validate();
  OptimizerState<T> s;
  s.config = config;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  return s;
}

template <typename T>
void adamw_step(nn::ParamStore<T>& params, const nn::ParamStore<T>& grads,
                OptimizerState<T>& state, double lr, std::span<const std::uint8_t> trainable) {
  const std::size_t n = params.count();
  if (grads.count() != n || state.m.count() != n || state.v.count() != n)
    throw ConfigError("optimizer state does not match parameters");
  if (!trainable.empty() && trainable.size() != n)
    throw ConfigError("trainable mask does not match parameters");
  const auto active = [&](std::size_t i) { return trainable.empty() || trainable[i] != 0; };
  for (std::size_t i = 0; i < n; ++i) {
    if (params.at(i).size() != grads.at(i).size())
      throw ConfigError("gradient shape mismatch for " + params.name(i));
    if (!active(i)) continue;
    for (T g : grads.at(i))
      if (!std::isfinite(g)) throw DivergenceError("diverged: non-finite gradient in " + params.name(i));
  }

  const auto& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  const double decay = 1.0 - lr * c.weight_decay;
  for (std::size_t i = 0; i < n; ++i) {
    if (!active(i)) continue;
    auto& p = params.at(i);
    const auto& g = grads.at(i);
    auto& m = state.m.at(i);
    auto& v = state.v.at(i);
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = static_cast<double>(g[k]);
      const double mk = c.beta1 * static_cast<double>(m[k]) + (1 - c.beta1) * gk;
      const double vk = c.beta2 * static_cast<double>(v[k]) + (1 - c.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      double theta = static_cast<double>(p[k]) * decay;
      theta -= lr * (mk / bc1) / (std::sqrt(vk / bc2) + c.eps);
      p[k] = static_cast<T>(theta);
    }
  }
}

template OptimizerState<float> make_optimizer<float>(const nn::ParamStore<float>&, const AdamWConfig&);
template OptimizerState<double> make_optimizer<double>(const nn::ParamStore<double>&,
                                                       const AdamWConfig&);
template void adamw_step<float>(nn::ParamStore<float>&, const nn::ParamStore<float>&,
                                OptimizerState<float>&, double, std::span<const std::uint8_t>);
template void adamw_step<double>(nn::ParamStore<double>&, const nn::ParamStore<double>&,
                                 OptimizerState<double>&, double, std::span<const std::uint8_t>);

void to_json(nlohmann::json& j, const ScheduleConfig& c) {
  j = {{"kind", c.kind == ScheduleKind::step ? "step" : "plateau"},
       {"period_epochs", c.period_epochs},
       {"factor", c.factor},
       {"patience_epochs", c.patience_epochs}};
}

void from_json(const nlohmann::json& j, ScheduleConfig& c) {
  ScheduleConfig d;
  const auto kind = j.value("kind", std::string("step"));
  if (kind == "step") c.kind = ScheduleKind::step;
  else if (kind == "plateau") c.kind = ScheduleKind::plateau;
  else throw ConfigError("unknown schedule " + kind);
  c.period_epochs = j.value("period_epochs", d.period_epochs);
  c.factor = j.value("factor", d.factor);
  c.patience_epochs = j.value("patience_epochs", d.patience_epochs);
  if (c.period_epochs == 0) throw ConfigError("period_epochs must be >= 1");
  if (!(c.factor > 0 && c.factor <= 1)) throw ConfigError("schedule factor must lie in (0, 1]");
}

double schedule_lr(const ScheduleConfig& schedule, double lr0, double min_lr, std::size_t epoch,
                   std::span<const double> history) {
  if (schedule.kind == ScheduleKind::step) {
    const auto k = static_cast<double>(epoch / std::max<std::size_t>(1, schedule.period_epochs));
    return std::max(lr0 * std::pow(schedule.factor, k), min_lr);
  }
  double lr = lr0;
  double best = -std::numeric_limits<double>::infinity();
  std::size_t bad = 0;
  const std::size_t n = std::min(epoch, history.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (history[i] > best) {
      best = history[i];
      bad = 0;
    } else {
      ++bad;
    }
    if (schedule.patience_epochs > 0 && bad >= schedule.patience_epochs) {
      lr = std::max(lr * schedule.factor, min_lr);
      bad = 0;
    }
  }
  return std::max(lr, min_lr);
}

bool EarlyStopping::update(double loss) {
  if (loss < best_) {
    best_ = loss;
    bad_ = 0;
  } else {
    ++bad_;
  }
  return patience_ > 0 && bad_ >= patience_;
}

}  // namespace ecgf::train

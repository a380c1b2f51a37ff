#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ecgf/nnet.hpp"
#include "ecgf/rng.hpp"

namespace ecgf::testutil {

/// Config used by the network gradient checks: 2 input channels, length 64,
/// two stages of width 8.
inline nn::ModelConfig tiny_config() {
  nn::ModelConfig c;
  c.in_channels = 2;
  c.n_classes = 3;
  c.stem = {8, 5, 2};
  c.stages = {{1, 8, 2, 3}, {1, 8, 2, 3}};
  c.group_width = 4;
  c.se_ratio = 0.25;
  return c;
}

struct GradCheckResult {
  double max_rel = 0;  // over arrays: |a - n| / max(|a|, |n|) in the 2-norm
  std::string worst_array;
  std::size_t checked = 0;
};

/// Central differences of f = sum(w * logits) in training mode for every
/// parameter element.
inline GradCheckResult network_gradcheck(const nn::ModelConfig& config, std::uint64_t seed,
                                         std::size_t batch = 3, std::size_t length = 64,
                                         double step = 1e-5) {
  auto model = nn::build_model<double>(config, seed);
  // Move tau and the normalization affine away from their initial values so
  // every path is exercised.
  Rng rng(derive_seed(seed, {99}));
  for (std::size_t i = 0; i < model.params.count(); ++i) {
    const auto& name = model.params.name(i);
    if (name == "tau" || name.find(".bn.") != std::string::npos)
      for (auto& v : model.params.at(i)) v += 0.2 * (uniform01(rng) - 0.5);
  }
  nn::Tensor3<double> x(batch, static_cast<std::size_t>(config.in_channels), length);
  for (auto& v : x.data) v = 2 * uniform01(rng) - 1;
  std::vector<double> w(batch * static_cast<std::size_t>(config.n_classes));
  for (auto& v : w) v = 2 * uniform01(rng) - 1;

  auto objective = [&](nn::Model<double>& m) {
    auto copy = m;
    const auto r = nn::forward(copy, x, nn::Mode::train);
    double f = 0;
    for (std::size_t i = 0; i < w.size(); ++i) f += w[i] * r.logits[i];
    return f;
  };

  auto work = model;
  const auto fr = nn::forward(work, x, nn::Mode::train);
  const auto grads = nn::backward<double>(work, fr.cache, w);

  GradCheckResult out;
  auto probe = model;
  for (std::size_t a = 0; a < probe.params.count(); ++a) {
    double diff2 = 0, an2 = 0, nu2 = 0;
    auto& arr = probe.params.at(a);
    for (std::size_t k = 0; k < arr.size(); ++k) {
      const double orig = arr[k];
      arr[k] = orig + step;
      const double fp = objective(probe);
      arr[k] = orig - step;
      const double fm = objective(probe);
      arr[k] = orig;
      const double numeric = (fp - fm) / (2 * step);
      const double analytic = grads.at(a)[k];
      diff2 += (analytic - numeric) * (analytic - numeric);
      an2 += analytic * analytic;
      nu2 += numeric * numeric;
      ++out.checked;
    }
    const double denom = std::max({std::sqrt(an2), std::sqrt(nu2), 1e-12});
    const double rel = std::sqrt(diff2) / denom;
    if (rel > out.max_rel) {
      out.max_rel = rel;
      out.worst_array = probe.params.name(a);
    }
  }
  return out;
}

}  // namespace ecgf::testutil

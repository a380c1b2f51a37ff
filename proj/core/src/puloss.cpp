#include "ecgf/puloss.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "ecgf/error.hpp"

namespace ecgf::loss {

void LossConfig::validate() const {
  if (!(gamma_pu > 0) || !std::isfinite(gamma_pu)) throw ConfigError("gamma_pu must be positive");
  if (!(gamma_focal >= 0) || !std::isfinite(gamma_focal))
    throw ConfigError("gamma_focal must be >= 0");
}

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::pu: return "pu";
    case LossKind::bce: return "bce";
    case LossKind::focal: return "focal";
  }
  return "pu";
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "pu") return LossKind::pu;
  if (name == "bce") return LossKind::bce;
  if (name == "focal") return LossKind::focal;
  throw ConfigError("unknown loss kind " + std::string(name));
}

void to_json(nlohmann::json& j, const LossConfig& c) {
  j = {{"kind", to_string(c.kind)},
       {"gamma_pu", c.gamma_pu},
       {"gamma_focal", c.gamma_focal},
       {"reduction", c.reduction == Reduction::mean ? "mean" : "sum"},
       {"assignment", c.assignment == PuAssignment::verbatim_on_positive ? "verbatim_on_positive"
                                                                         : "verbatim_on_unlabeled"}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
  LossConfig d;
  c.kind = parse_loss_kind(j.value("kind", std::string(to_string(d.kind))));
  c.gamma_pu = j.value("gamma_pu", d.gamma_pu);
  c.gamma_focal = j.value("gamma_focal", d.gamma_focal);
  const auto red = j.value("reduction", std::string("mean"));
  if (red == "mean") c.reduction = Reduction::mean;
  else if (red == "sum") c.reduction = Reduction::sum;
  else throw ConfigError("unknown reduction " + red);
  const auto as = j.value("assignment", std::string("verbatim_on_positive"));
  if (as == "verbatim_on_positive") c.assignment = PuAssignment::verbatim_on_positive;
  else if (as == "verbatim_on_unlabeled") c.assignment = PuAssignment::verbatim_on_unlabeled;
  else throw ConfigError("unknown pu assignment " + as);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double pu_positive(double p, double gamma) { return -(gamma - p) * p * p; }
double pu_unlabeled(double p, double gamma) { return pu_positive(1.0 - p, gamma); }
double pu_positive_dp(double p, double gamma) { return 3 * p * p - 2 * gamma * p; }
double pu_unlabeled_dp(double p, double gamma) {
  const double q = 1.0 - p;
  return 2 * gamma * q - 3 * q * q;
}

namespace {

template <typename T>
void check_inputs(std::span<const T> logits, std::span<const std::uint8_t> labels) {
  if (logits.size() != labels.size()) throw ConfigError("logits and labels differ in size");
  if (logits.empty()) throw ConfigError("empty loss input");
  for (auto y : labels)
    if (y > 1) throw ConfigError("labels must be 0 or 1");
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

template <typename T>
void reduce(LossOutput<T>& out, double total, Reduction reduction) {
  if (reduction == Reduction::mean) {
    const double n = static_cast<double>(out.dlogits.size());
    out.value = total / n;
    for (auto& g : out.dlogits) g = static_cast<T>(g / n);
  } else {
    out.value = total;
  }
}

}  // namespace

template <typename T>
LossOutput<T> pu_loss(std::span<const T> logits, std::span<const std::uint8_t> labels,
                      double gamma, Reduction reduction, PuAssignment assignment) {
  check_inputs(logits, labels);
  if (!(gamma > 0)) throw ConfigError("gamma must be positive");
  LossOutput<T> out;
  out.dlogits.resize(logits.size());
  double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = static_cast<double>(logits[i]);
    const double p = sigmoid(z);
    const double dpdz = p * (1.0 - p);
    bool verbatim = labels[i] == 1;
    if (assignment == PuAssignment::verbatim_on_unlabeled) verbatim = !verbatim;
    if (verbatim) {
      total += pu_positive(p, gamma);
      out.dlogits[i] = static_cast<T>(pu_positive_dp(p, gamma) * dpdz);
    } else {
      total += pu_unlabeled(p, gamma);
      out.dlogits[i] = static_cast<T>(pu_unlabeled_dp(p, gamma) * dpdz);
    }
  }
  reduce(out, total, reduction);
  return out;
}

template <typename T>
LossOutput<T> baseline_loss(LossKind kind, std::span<const T> logits,
                            std::span<const std::uint8_t> labels, double gamma_focal,
                            Reduction reduction) {
  check_inputs(logits, labels);
  if (kind == LossKind::pu) throw ConfigError("baseline_loss expects bce or focal");
  if (!(gamma_focal >= 0)) throw ConfigError("gamma_focal must be >= 0");
  LossOutput<T> out;
  out.dlogits.resize(logits.size());
  double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = static_cast<double>(logits[i]);
    const double p = sigmoid(z);
    const double q = 1.0 - p;
    const bool pos = labels[i] == 1;
    if (kind == LossKind::bce) {
      total += softplus(z) - (pos ? z : 0.0);
      out.dlogits[i] = static_cast<T>(p - (pos ? 1.0 : 0.0));
      continue;
    }
    const double g = gamma_focal;
    if (pos) {
      const double log_p = -softplus(-z);
      const double w = std::pow(q, g);
      total += -w * log_p;
      out.dlogits[i] = static_cast<T>(g * w * p * log_p - w * q);
    } else {
      const double log_q = -softplus(z);
      const double w = std::pow(p, g);
      total += -w * log_q;
      out.dlogits[i] = static_cast<T>(-g * w * q * log_q + w * p);
    }
  }
  reduce(out, total, reduction);
  return out;
}

template <typename T>
LossOutput<T> compute_loss(const LossConfig& cfg, std::span<const T> logits,
                           std::span<const std::uint8_t> labels) {
  cfg.validate();
  if (cfg.kind == LossKind::pu)
    return pu_loss<T>(logits, labels, cfg.gamma_pu, cfg.reduction, cfg.assignment);
  return baseline_loss<T>(cfg.kind, logits, labels, cfg.gamma_focal, cfg.reduction);
}

#define ECGF_INSTANTIATE_LOSS(T)                                                             \
  template LossOutput<T> pu_loss<T>(std::span<const T>, std::span<const std::uint8_t>, double, \
                                    Reduction, PuAssignment);                                 \
  template LossOutput<T> baseline_loss<T>(LossKind, std::span<const T>,                      \
                                          std::span<const std::uint8_t>, double, Reduction); \
  template LossOutput<T> compute_loss<T>(const LossConfig&, std::span<const T>,              \
                                         std::span<const std::uint8_t>);

ECGF_INSTANTIATE_LOSS(float)
ECGF_INSTANTIATE_LOSS(double)

#undef ECGF_INSTANTIATE_LOSS

}  // namespace ecgf::loss

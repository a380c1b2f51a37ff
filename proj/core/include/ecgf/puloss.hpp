#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace ecgf::loss {

enum class LossKind { pu, bce, focal };
enum class Reduction { mean, sum };

/// Which polarity receives -(gamma - p) p^2 verbatim. The other polarity gets
/// the p -> 1 - p mirror.
enum class PuAssignment { verbatim_on_positive, verbatim_on_unlabeled };

struct LossConfig {
  LossKind kind = LossKind::pu;
  double gamma_pu = 1.5;
  double gamma_focal = 2.0;
  Reduction reduction = Reduction::mean;
  PuAssignment assignment = PuAssignment::verbatim_on_positive;

  /// gamma_pu must be positive. Values in (0, 1] are accepted for sweeps but
  /// lose strict monotonicity of the positive term near p = 1.
  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view name);

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

template <typename T>
struct LossOutput {
  double value = 0;
  std::vector<T> dlogits;
};

/// Numerically stable logistic.
double sigmoid(double x);

/// Per-element terms as functions of the probability p.
double pu_positive(double p, double gamma);
double pu_unlabeled(double p, double gamma);
double pu_positive_dp(double p, double gamma);
double pu_unlabeled_dp(double p, double gamma);

/// logits and labels are batch x n_labels row-major; labels are 0/1.
template <typename T>
LossOutput<T> pu_loss(std::span<const T> logits, std::span<const std::uint8_t> labels,
                      double gamma, Reduction reduction = Reduction::mean,
                      PuAssignment assignment = PuAssignment::verbatim_on_positive);

template <typename T>
LossOutput<T> baseline_loss(LossKind kind, std::span<const T> logits,
                            std::span<const std::uint8_t> labels, double gamma_focal,
                            Reduction reduction = Reduction::mean);

/// Dispatches on cfg.kind.
template <typename T>
LossOutput<T> compute_loss(const LossConfig& cfg, std::span<const T> logits,
                           std::span<const std::uint8_t> labels);

}  // namespace ecgf::loss

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecgf/recordio.hpp"
#include "ecgf/rng.hpp"

namespace ecgf::hexaxial {

/// A frontal-plane lead expressed through leads I and II:
/// signal = coeff_i * I + coeff_ii * II.
struct FrontalLead {
  std::string_view name;
  double angle_deg;
  double coeff_i;
  double coeff_ii;
};

// Lead I sits at 0 degrees; the table spans -90..+90 in 30 degree steps.
// Goldberger leads (aVL, -aVR, aVF, -aVF) equal sqrt(3)/2 times the ideal
// projection on their axis; bipolar leads (I, II, -III) have unit scale.
inline constexpr std::array<FrontalLead, 7> kFrontalLeads{{
    {"I", 0.0, 1.0, 0.0},
    {"-aVR", 30.0, 0.5, 0.5},
    {"II", 60.0, 0.0, 1.0},
    {"aVF", 90.0, -0.5, 1.0},
    {"aVL", -30.0, 1.0, -0.5},
    {"-III", -60.0, 1.0, -1.0},
    {"-aVF", -90.0, 0.5, -1.0},
}};

/// The six candidates mixed in by the single-lead sampler (every lead but I).
std::span<const FrontalLead> augmented_leads();

/// Throws ConfigError for names outside the table.
const FrontalLead& frontal_lead(std::string_view name);

/// Amplitude of the derived lead relative to the ideal projection on its axis.
double projection_scale(const FrontalLead& lead);

/// Exact linear combination of leads I and II.
std::vector<double> derive_lead(std::string_view name, std::span<const double> lead_i,
                                std::span<const double> lead_ii);
std::vector<float> derive_lead(std::string_view name, std::span<const float> lead_i,
                               std::span<const float> lead_ii);

/// Projection of a frontal dipole onto an axis at angle_deg (y axis points
/// toward +90, i.e. toward aVF).
std::vector<double> project(std::span<const double> dx, std::span<const double> dy,
                            double angle_deg);

struct ProjectionCheck {
  double correlation;
  double scale;
};

/// Compares the lead derived from the dipole's ideal I/II projections against
/// the direct projection on the lead axis.
ProjectionCheck verify_projection(const FrontalLead& lead, std::span<const double> dx,
                                  std::span<const double> dy);

struct AugmentPolicy {
  double p_augment = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SampledLead {
  std::vector<float> series;
  std::string name;
};

/// Returns lead I with probability 1 - p_augment, otherwise one of the six
/// augmented leads uniformly. Consumes draws from rng only.
SampledLead sample_training_lead(const EcgRecord& record, const AugmentPolicy& policy, Rng& rng);

/// Same choice logic on raw I/II series.
SampledLead sample_training_lead(std::span<const float> lead_i, std::span<const float> lead_ii,
                                 const AugmentPolicy& policy, Rng& rng);

/// Index into kFrontalLeads chosen by the sampler (0 means lead I).
std::size_t sample_lead_index(const AugmentPolicy& policy, Rng& rng);

/// The angle/coefficient table as a JSON document.
std::string lead_table_json();

}  // namespace ecgf::hexaxial

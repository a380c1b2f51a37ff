#include "ecgf/hexaxial.hpp"

#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "ecgf/error.hpp"

namespace ecgf::hexaxial {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

template <typename T>
std::vector<T> combine(const FrontalLead& lead, std::span<const T> lead_i,
                       std::span<const T> lead_ii) {
  if (lead_i.size() != lead_ii.size()) throw ConfigError("lead I and lead II lengths differ");
  std::vector<T> out(lead_i.size());
  // Computed in double; the coefficients are exact binary fractions.
  for (std::size_t t = 0; t < out.size(); ++t)
    out[t] = static_cast<T>(lead.coeff_i * static_cast<double>(lead_i[t]) +
                            lead.coeff_ii * static_cast<double>(lead_ii[t]));
  return out;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

std::span<const FrontalLead> augmented_leads() {
  return std::span<const FrontalLead>(kFrontalLeads).subspan(1);
}

const FrontalLead& frontal_lead(std::string_view name) {
  for (const auto& lead : kFrontalLeads)
    if (lead.name == name) return lead;
  throw ConfigError("unknown frontal lead " + std::string(name));
}

double projection_scale(const FrontalLead& lead) {
  // The combination of two unit projections at 0 and 60 degrees has this norm.
  const double x = lead.coeff_i + lead.coeff_ii * 0.5;
  const double y = lead.coeff_ii * std::sqrt(3.0) / 2.0;
  return std::hypot(x, y);
}

std::vector<double> derive_lead(std::string_view name, std::span<const double> lead_i,
                                std::span<const double> lead_ii) {
  return combine(frontal_lead(name), lead_i, lead_ii);
}

std::vector<float> derive_lead(std::string_view name, std::span<const float> lead_i,
                               std::span<const float> lead_ii) {
  return combine(frontal_lead(name), lead_i, lead_ii);
}

std::vector<double> project(std::span<const double> dx, std::span<const double> dy,
                            double angle_deg) {
  if (dx.size() != dy.size()) throw ConfigError("dipole components differ in length");
  const double c = std::cos(angle_deg * kDeg);
  const double s = std::sin(angle_deg * kDeg);
  std::vector<double> out(dx.size());
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = dx[t] * c + dy[t] * s;
  return out;
}

ProjectionCheck verify_projection(const FrontalLead& lead, std::span<const double> dx,
                                  std::span<const double> dy) {
  if (dx.size() != dy.size()) throw ConfigError("dipole components differ in length");
  if (dx.size() < 3) throw ConfigError("degenerate dipole: too few samples");

  // A dipole with a fixed direction has a rank-1 second-moment matrix.
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t t = 0; t < dx.size(); ++t) {
    sxx += dx[t] * dx[t];
    syy += dy[t] * dy[t];
    sxy += dx[t] * dy[t];
  }
  const double trace = sxx + syy;
  if (!(trace > 0) || sxx * syy - sxy * sxy <= 1e-12 * trace * trace)
    throw ConfigError("degenerate dipole: direction does not vary");

  const auto ideal_i = project(dx, dy, 0.0);
  const auto ideal_ii = project(dx, dy, 60.0);
  const auto derived = combine<double>(lead, ideal_i, ideal_ii);
  const auto direct = project(dx, dy, lead.angle_deg);

  double num = 0, den = 0;
  for (std::size_t t = 0; t < direct.size(); ++t) {
    num += derived[t] * direct[t];
    den += direct[t] * direct[t];
  }
  return {pearson(derived, direct), num / den};
}

void AugmentPolicy::validate() const {
  if (!(p_augment >= 0.0 && p_augment <= 1.0))
    throw ConfigError("p_augment must lie in [0, 1]");
}

std::size_t sample_lead_index(const AugmentPolicy& policy, Rng& rng) {
  policy.validate();
  if (uniform01(rng) >= policy.p_augment) return 0;
  return 1 + static_cast<std::size_t>(uniform_index(rng, augmented_leads().size()));
}

SampledLead sample_training_lead(std::span<const float> lead_i, std::span<const float> lead_ii,
                                 const AugmentPolicy& policy, Rng& rng) {
  const auto& lead = kFrontalLeads[sample_lead_index(policy, rng)];
  if (lead.name == "I") return {std::vector<float>(lead_i.begin(), lead_i.end()), "I"};
  return {combine(lead, lead_i, lead_ii), std::string(lead.name)};
}

SampledLead sample_training_lead(const EcgRecord& record, const AugmentPolicy& policy, Rng& rng) {
  const auto i = record.lead_index("I");
  const auto ii = record.lead_index("II");
  if (!i || !ii)
    throw FormatError("record " + record.record_id + " lacks lead I or II for augmentation");
  return sample_training_lead(record.data[*i], record.data[*ii], policy, rng);
}

std::string lead_table_json() {
  nlohmann::ordered_json leads = nlohmann::ordered_json::array();
  for (const auto& lead : kFrontalLeads) {
    leads.push_back({{"name", lead.name},
                     {"angle_deg", lead.angle_deg},
                     {"coeff_I", lead.coeff_i},
                     {"coeff_II", lead.coeff_ii},
                     {"projection_scale", projection_scale(lead)}});
  }
  nlohmann::ordered_json doc = {
      {"description",
       "Frontal-plane leads as linear combinations of leads I and II. "
       "angle_deg is the hexaxial axis with lead I at 0 and aVF at +90. "
       "projection_scale is the amplitude relative to the ideal projection on that axis."},
      {"leads", leads}};
  return doc.dump(2) + "\n";
}

}  // namespace ecgf::hexaxial

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ecgf {

/// A multi-lead waveform. Voltages are in mV, one series per lead.
struct EcgRecord {
  std::string record_id;
  std::string patient_id;
  double fs = 0.0;
  std::vector<std::string> lead_names;
  std::vector<std::vector<float>> data;
  std::map<std::string, std::string> meta;

  std::size_t n_leads() const noexcept { return data.size(); }
  std::size_t n_samples() const noexcept { return data.empty() ? 0 : data.front().size(); }

  /// Index of a lead by name, if present.
  std::optional<std::size_t> lead_index(std::string_view name) const;
  /// Throws FormatError when the lead is absent.
  std::span<const float> lead(std::string_view name) const;

  /// Checks fs > 0, unique lead names, equal non-zero lead lengths.
  void validate() const;

  bool operator==(const EcgRecord&) const = default;
};

/// True when both records carry the same bytes (floats compared bitwise).
bool bit_equal(const EcgRecord& a, const EcgRecord& b);

// ECGB v1 container: "ECGB" | u32 version | u32 header_len | JSON header |
// lead-major little-endian f32 payload.
inline constexpr std::uint32_t kEcgbVersion = 1;

std::vector<std::uint8_t> encode_record(const EcgRecord& record);
EcgRecord decode_record(std::span<const std::uint8_t> bytes);

void write_record(const std::filesystem::path& path, const EcgRecord& record);
EcgRecord read_record(const std::filesystem::path& path);

/// Ordered diagnostic label names; position is the label index.
class LabelVocabulary {
 public:
  LabelVocabulary() = default;
  explicit LabelVocabulary(std::vector<std::string> names);

  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  std::optional<std::size_t> find(std::string_view name) const;
  /// Throws FormatError for unknown names.
  std::size_t index(std::string_view name) const;

  /// Plain text, one label per line.
  static LabelVocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  bool operator==(const LabelVocabulary& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Positive label indices. Absent indices are unlabeled, not negative.
struct LabelSet {
  std::set<std::size_t> positives;

  bool contains(std::size_t i) const { return positives.contains(i); }
  void validate(std::size_t vocab_size) const;
  /// Multi-hot row of length vocab_size.
  std::vector<std::uint8_t> multi_hot(std::size_t vocab_size) const;

  bool operator==(const LabelSet&) const = default;
};

struct ManifestEntry {
  std::string path;
  std::string record_id;
  std::string patient_id;
  LabelSet labels;
  std::optional<double> target;

  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  std::size_t size() const noexcept { return entries.size(); }
  bool empty() const noexcept { return entries.empty(); }
  /// Unique record ids and valid label sets.
  void validate(std::size_t vocab_size) const;

  bool operator==(const Manifest&) const = default;
};

/// JSON-lines: {"path","record_id","patient_id","labels":[names],"target"?}.
Manifest read_manifest(const std::filesystem::path& path, const LabelVocabulary& vocab);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest,
                    const LabelVocabulary& vocab);
Manifest parse_manifest(std::string_view jsonl, const LabelVocabulary& vocab);
std::string format_manifest(const Manifest& manifest, const LabelVocabulary& vocab);

/// Lower-case, trim, and collapse internal whitespace runs to one space.
std::string normalize_phrase(std::string_view phrase);

struct ParsedReport {
  LabelSet labels;
  std::vector<std::string> unknown;
};

/// Splits a free-text report on '|' and matches each normalized phrase against
/// the vocabulary. Unmatched phrases are returned in normalized form.
ParsedReport parse_report(std::string_view text, const LabelVocabulary& vocab);

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

/// Position of a patient in [0, 1), a stable function of (patient_id, seed).
double patient_unit_hash(std::string_view patient_id, std::uint64_t seed);

/// Partitions by patient: every record of a patient lands in the same split.
std::array<Manifest, 3> patient_split(const Manifest& manifest, const SplitRatios& ratios,
                                      std::uint64_t seed);

}  // namespace ecgf

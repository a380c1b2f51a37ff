#include "ecgf/recordio.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ecgf/error.hpp"
#include "ecgf/rng.hpp"

namespace ecgf {

using nlohmann::json;

namespace {

constexpr std::array<std::uint8_t, 4> kEcgbMagic{'E', 'C', 'G', 'B'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::optional<std::size_t> EcgRecord::lead_index(std::string_view name) const {
  for (std::size_t i = 0; i < lead_names.size(); ++i)
    if (lead_names[i] == name) return i;
  return std::nullopt;
}

std::span<const float> EcgRecord::lead(std::string_view name) const {
  auto i = lead_index(name);
  if (!i) throw FormatError("record " + record_id + " has no lead " + std::string(name));
  return data[*i];
}

void EcgRecord::validate() const {
  if (!(fs > 0.0) || !std::isfinite(fs)) throw FormatError("sampling rate must be positive");
  if (lead_names.size() != data.size())
    throw FormatError("lead name count does not match lead count");
  if (data.empty()) throw FormatError("record has no leads");
  std::set<std::string> seen;
  for (const auto& n : lead_names)
    if (!seen.insert(n).second) throw FormatError("duplicate lead name " + n);
  const std::size_t n = data.front().size();
  for (const auto& series : data)
    if (series.size() != n) throw FormatError("ragged leads");
  if (n == 0) throw FormatError("record has zero samples");
}

bool bit_equal(const EcgRecord& a, const EcgRecord& b) {
  if (a.record_id != b.record_id || a.patient_id != b.patient_id ||
      std::bit_cast<std::uint64_t>(a.fs) != std::bit_cast<std::uint64_t>(b.fs) ||
      a.lead_names != b.lead_names || a.meta != b.meta || a.data.size() != b.data.size())
    return false;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    if (a.data[i].size() != b.data[i].size()) return false;
    if (std::memcmp(a.data[i].data(), b.data[i].data(), a.data[i].size() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

std::vector<std::uint8_t> encode_record(const EcgRecord& record) {
  record.validate();
  json header = {{"record_id", record.record_id},
                 {"patient_id", record.patient_id},
                 {"fs", record.fs},
                 {"lead_names", record.lead_names},
                 {"n_samples", record.n_samples()},
                 {"meta", record.meta}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(12 + text.size() + record.n_leads() * record.n_samples() * 4);
  out.insert(out.end(), kEcgbMagic.begin(), kEcgbMagic.end());
  put_u32(out, kEcgbVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& series : record.data)
    for (float v : series) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

EcgRecord decode_record(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kEcgbMagic.begin(), kEcgbMagic.end(), bytes.begin()))
    throw FormatError("not an ECGB file");
  if (bytes.size() < 12) throw FormatError("truncated");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kEcgbVersion)
    throw FormatError("unsupported ECGB version " + std::to_string(version));
  const std::uint32_t header_len = get_u32(bytes, 8);
  if (bytes.size() - 12 < header_len) throw FormatError("truncated");

  json header;
  try {
    header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad ECGB header: ") + e.what());
  }

  EcgRecord r;
  std::size_t n_samples = 0;
  try {
    r.record_id = header.at("record_id").get<std::string>();
    r.patient_id = header.at("patient_id").get<std::string>();
    r.fs = header.at("fs").get<double>();
    r.lead_names = header.at("lead_names").get<std::vector<std::string>>();
    n_samples = header.at("n_samples").get<std::size_t>();
    if (header.contains("meta")) r.meta = header.at("meta").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad ECGB header: ") + e.what());
  }

  const std::size_t payload = bytes.size() - 12 - header_len;
  const std::size_t n_leads = r.lead_names.size();
  if (n_samples != 0 && n_leads > payload / 4 / n_samples) throw FormatError("truncated");
  const std::size_t needed = n_leads * n_samples * 4;
  if (payload < needed) throw FormatError("truncated");
  if (payload > needed) throw FormatError("trailing bytes after ECGB payload");

  std::size_t offset = 12 + header_len;
  r.data.assign(n_leads, std::vector<float>(n_samples));
  for (auto& series : r.data)
    for (auto& v : series) {
      v = std::bit_cast<float>(get_u32(bytes, offset));
      offset += 4;
    }
  r.validate();
  return r;
}

void write_record(const std::filesystem::path& path, const EcgRecord& record) {
  const auto bytes = encode_record(record);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

EcgRecord read_record(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_record(bytes);
}

// ---------------------------------------------------------------------------

LabelVocabulary::LabelVocabulary(std::vector<std::string> names) : names_(std::move(names)) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i].empty()) throw FormatError("empty label name at line " + std::to_string(i + 1));
    if (!index_.emplace(names_[i], i).second)
      throw FormatError("duplicate label name " + names_[i]);
  }
}

std::optional<std::size_t> LabelVocabulary::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t LabelVocabulary::index(std::string_view name) const {
  auto i = find(name);
  if (!i) throw FormatError("unknown label " + std::string(name));
  return *i;
}

LabelVocabulary LabelVocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    names.push_back(line);
  }
  // A trailing newline does not add an empty label.
  while (!names.empty() && names.back().empty()) names.pop_back();
  return LabelVocabulary(std::move(names));
}

void LabelVocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& n : names_) out << n << '\n';
}

void LabelSet::validate(std::size_t vocab_size) const {
  if (!positives.empty() && *positives.rbegin() >= vocab_size)
    throw FormatError("label index " + std::to_string(*positives.rbegin()) +
                      " out of range for vocabulary of size " + std::to_string(vocab_size));
}

std::vector<std::uint8_t> LabelSet::multi_hot(std::size_t vocab_size) const {
  validate(vocab_size);
  std::vector<std::uint8_t> row(vocab_size, 0);
  for (auto i : positives) row[i] = 1;
  return row;
}

void Manifest::validate(std::size_t vocab_size) const {
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (!ids.insert(e.record_id).second) throw FormatError("duplicate record_id " + e.record_id);
    e.labels.validate(vocab_size);
  }
}

Manifest parse_manifest(std::string_view jsonl, const LabelVocabulary& vocab) {
  Manifest m;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json obj = json::parse(line);
      ManifestEntry e;
      e.path = obj.at("path").get<std::string>();
      e.record_id = obj.at("record_id").get<std::string>();
      e.patient_id = obj.at("patient_id").get<std::string>();
      for (const auto& name : obj.value("labels", json::array()))
        e.labels.positives.insert(vocab.index(name.get<std::string>()));
      if (obj.contains("target") && !obj.at("target").is_null())
        e.target = obj.at("target").get<double>();
      m.entries.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  m.validate(vocab.size());
  return m;
}

std::string format_manifest(const Manifest& manifest, const LabelVocabulary& vocab) {
  std::string out;
  for (const auto& e : manifest.entries) {
    json labels = json::array();
    for (auto i : e.labels.positives) labels.push_back(vocab.name(i));
    json obj = {{"path", e.path},
                {"record_id", e.record_id},
                {"patient_id", e.patient_id},
                {"labels", labels}};
    if (e.target) obj["target"] = *e.target;
    out += obj.dump();
    out += '\n';
  }
  return out;
}

Manifest read_manifest(const std::filesystem::path& path, const LabelVocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), vocab);
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest,
                    const LabelVocabulary& vocab) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << format_manifest(manifest, vocab);
}

// ---------------------------------------------------------------------------

std::string normalize_phrase(std::string_view phrase) {
  std::string out;
  out.reserve(phrase.size());
  bool pending_space = false;
  for (unsigned char c : phrase) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

ParsedReport parse_report(std::string_view text, const LabelVocabulary& vocab) {
  ParsedReport result;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t bar = text.find('|', start);
    const std::size_t end = bar == std::string_view::npos ? text.size() : bar;
    std::string phrase = normalize_phrase(text.substr(start, end - start));
    if (!phrase.empty()) {
      if (auto idx = vocab.find(phrase))
        result.labels.positives.insert(*idx);
      else
        result.unknown.push_back(std::move(phrase));
    }
    if (bar == std::string_view::npos) break;
    start = bar + 1;
  }
  return result;
}

// ---------------------------------------------------------------------------

double patient_unit_hash(std::string_view patient_id, std::uint64_t seed) {
  return to_unit(splitmix64(fnv1a64(patient_id) ^ splitmix64(seed)));
}

std::array<Manifest, 3> patient_split(const Manifest& manifest, const SplitRatios& ratios,
                                      std::uint64_t seed) {
  if (manifest.empty()) throw ConfigError("cannot split an empty manifest");
  if (!(ratios.train > 0 && ratios.valid > 0 && ratios.test > 0))
    throw ConfigError("split ratios must be positive");
  if (std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1");

  std::array<Manifest, 3> out;
  const double cut_train = ratios.train;
  const double cut_valid = ratios.train + ratios.valid;
  for (const auto& e : manifest.entries) {
    const double u = patient_unit_hash(e.patient_id, seed);
    const std::size_t k = u < cut_train ? 0 : (u < cut_valid ? 1 : 2);
    out[k].entries.push_back(e);
  }
  return out;
}

}  // namespace ecgf

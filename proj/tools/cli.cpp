#include "cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ecgf/dsp.hpp"
#include "ecgf/error.hpp"
#include "ecgf/experiments.hpp"
#include "ecgf/metrics.hpp"
#include "ecgf/recordio.hpp"
#include "ecgf/rng.hpp"
#include "ecgf/synth.hpp"
#include "ecgf/trainer.hpp"

namespace ecgf::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

struct Globals {
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
  std::string precision = "f32";
  std::vector<std::string> sets;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

fs::path run_manifest_path(fs::path out) {
  std::string s = out.string();
  while (s.size() > 1 && (s.back() == '/' || s.back() == '\\')) s.pop_back();
  return s + ".run.json";
}

class RunLog {
 public:
  RunLog(std::string subcommand, const Globals& g)
      : subcommand_(std::move(subcommand)), globals_(g), t0_(std::chrono::steady_clock::now()) {}

  void write(const fs::path& out, const json& config, const json& inputs, const json& outputs,
             std::uint64_t seed) const {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    json j = {{"subcommand", subcommand_},
              {"config", config},
              {"inputs", inputs},
              {"outputs", outputs},
              {"seed", seed},
              {"workers", globals_.workers},
              {"precision", globals_.precision},
              {"tool_version", kToolVersion},
              {"duration_s", secs}};
    write_text(run_manifest_path(out), j.dump(2) + "\n");
  }

 private:
  std::string subcommand_;
  const Globals& globals_;
  std::chrono::steady_clock::time_point t0_;
};

/// Config document: defaults, then the file, then --set overrides.
json resolve_document(json defaults, const std::string& config_path, const Globals& g) {
  if (!config_path.empty()) defaults.merge_patch(read_json_file(config_path));
  for (const auto& s : g.sets) apply_override(defaults, s);
  return defaults;
}

std::uint64_t resolve_seed(json& doc, const Globals& g) {
  if (g.seed) doc["seed"] = *g.seed;
  return doc.value("seed", std::uint64_t{0});
}

struct DataDir {
  LabelVocabulary vocab;
  Manifest manifest;
  std::vector<EcgRecord> records;
};

DataDir load_data_dir(const fs::path& dir, const fs::path& manifest_override = {}) {
  if (dir.empty()) throw ConfigError("no data directory given (--data or data.dir)");
  DataDir d;
  d.vocab = LabelVocabulary::load(dir / "labels.txt");
  d.manifest = read_manifest(manifest_override.empty() ? dir / "manifest.jsonl" : manifest_override,
                             d.vocab);
  d.records.reserve(d.manifest.size());
  for (const auto& e : d.manifest.entries) d.records.push_back(read_record(dir / e.path));
  return d;
}

json data_defaults() {
  return {{"dir", ""},
          {"labels", json::array()},
          {"leads", standard_leads()},
          {"single_lead", nullptr},
          {"deletion_rate", 0.0}};
}

json train_document_defaults(const train::TrainConfig& tc) {
  json doc = tc;
  doc["data"] = data_defaults();
  doc["preprocess"] = dsp::PreprocessConfig{};
  doc["split"] = {{"train", 0.8}, {"valid", 0.1}, {"test", 0.1}};
  doc["model"] = {{"preset", "desk"}};
  return doc;
}

nn::ModelConfig resolve_model(const json& section, int in_channels, int n_classes) {
  json patch = section;
  const std::string preset = patch.value("preset", std::string("desk"));
  patch.erase("preset");
  json base = nn::ModelConfig::preset(preset, in_channels, n_classes);
  base.merge_patch(patch);
  base["in_channels"] = in_channels;
  base["n_classes"] = n_classes;
  auto mc = base.get<nn::ModelConfig>();
  mc.validate();
  return mc;
}

struct Prepared {
  std::vector<std::string> label_names;
  std::array<Manifest, 3> parts;
  train::Dataset train, valid;
};

SplitRatios split_of(const json& doc) {
  const auto& s = doc.at("split");
  return {s.value("train", 0.8), s.value("valid", 0.1), s.value("test", 0.1)};
}

// Builds training and validation windows from a data directory per the
// document's data / preprocess / split sections.
Prepared prepare(const json& doc, const DataDir& data, std::uint64_t seed) {
  const auto& dsec = doc.at("data");
  const auto pre = doc.at("preprocess").get<dsp::PreprocessConfig>();
  const auto label_names = dsec.value("labels", std::vector<std::string>{});
  const auto index = experiments::select_labels(data.vocab, label_names);

  Prepared p;
  for (auto k : index) p.label_names.push_back(data.vocab.name(k));
  p.parts = patient_split(data.manifest, split_of(doc), derive_seed(seed, {0x5b1}));
  const double rate = dsec.value("deletion_rate", 0.0);
  const Manifest train_m = experiments::corrupt_labels(p.parts[0], rate, derive_seed(seed, {0xde1}));
  if (dsec.contains("single_lead") && !dsec.at("single_lead").is_null()) {
    const double p_aug = dsec.at("single_lead").value("p_augment", 0.5);
    p.train = experiments::make_single_lead_dataset(data.records, train_m, index, pre,
                                                    {p_aug, derive_seed(seed, {0xa06})});
    p.valid = experiments::make_single_lead_dataset(data.records, p.parts[1], index, pre,
                                                    {6.0 / 7.0, derive_seed(seed, {0xa07})});
  } else {
    const auto leads = dsec.value("leads", standard_leads());
    p.train = experiments::make_dataset(data.records, train_m, index, pre, leads);
    p.valid = experiments::make_dataset(data.records, p.parts[1], index, pre, leads);
  }
  return p;
}

void write_split_files(const fs::path& out, const Prepared& p, const LabelVocabulary& vocab) {
  const char* names[3] = {"split_train.jsonl", "split_valid.jsonl", "split_test.jsonl"};
  for (int i = 0; i < 3; ++i) write_manifest(out / names[i], p.parts[i], vocab);
  vocab.save(out / "labels.txt");
  write_text(out / "label_names.json", json(p.label_names).dump() + "\n");
}

template <typename T>
void save_outputs(const fs::path& out, const train::TrainResult<T>& r, bool write_best) {
  if (write_best || !fs::exists(out / "best.eckp")) train::save_checkpoint(r.best, out / "best.eckp");
  train::save_checkpoint(r.last, out / "last.eckp");
  write_text(out / "history.csv", train::history_csv(r.history));
}

template <typename T>
train::EpochCallback progress(std::ostream& err) {
  return [&err](const train::HistoryRow& row) {
    err << "epoch " << row.epoch << "  train_loss " << row.train_loss << "  valid_loss "
        << row.valid_loss << "  valid_auroc " << row.valid_auroc << "  lr " << row.lr << "\n";
  };
}

// ---------------------------------------------------------------------------

int cmd_synth(const Globals& g, const std::string& out_dir, std::optional<std::size_t> n,
              const std::string& config_path, std::ostream& err) {
  RunLog log("synth", g);
  // Default to a mixed cohort so every label occurs.
  SynthConfig base;
  base.heart_rate_min_bpm = 40;
  base.heart_rate_max_bpm = 140;
  base.irregular_fraction = 0.2;
  base.mean_qrs_axis_deg = 30;
  base.axis_spread_deg = 100;
  json doc = resolve_document(json(base), config_path, g);
  const std::uint64_t seed = resolve_seed(doc, g);
  if (n) doc["n_records"] = *n;
  const auto cfg = doc.get<SynthConfig>();
  const auto data = generate_synthetic(cfg);

  const fs::path out(out_dir);
  fs::create_directories(out / "records");
  for (std::size_t i = 0; i < data.records.size(); ++i)
    write_record(out / data.manifest.entries[i].path, data.records[i]);
  write_manifest(out / "manifest.jsonl", data.manifest, data.vocab);
  data.vocab.save(out / "labels.txt");
  write_text(out / "synth.json", json(cfg).dump(2) + "\n");
  log.write(out, json(cfg), json::object(),
            {{"dir", out.string()}, {"n_records", data.records.size()}}, seed);
  err << "wrote " << data.records.size() << " records to " << out.string() << "\n";
  return kExitOk;
}

int cmd_preprocess(const Globals& g, const std::string& data_dir, const std::string& out_dir,
                   const std::string& config_path, std::ostream& err) {
  RunLog log("preprocess", g);
  json doc = resolve_document(json(dsp::PreprocessConfig{}), config_path, g);
  const auto cfg = doc.get<dsp::PreprocessConfig>();
  cfg.validate();
  const auto data = load_data_dir(data_dir);
  const fs::path out(out_dir);
  fs::create_directories(out / "records");

  Manifest windows;
  std::size_t count = 0;
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const auto& rec = data.records[i];
    const auto& entry = data.manifest.entries[i];
    const auto leads = rec.lead_names;
    for (const auto& seg : dsp::preprocess(rec, cfg, leads)) {
      const auto wrec = dsp::segment_to_record(seg, rec.patient_id, cfg.target_fs);
      ManifestEntry e = entry;
      e.record_id = wrec.record_id;
      e.path = "records/" + wrec.record_id + ".ecgb";
      write_record(out / e.path, wrec);
      windows.entries.push_back(std::move(e));
      ++count;
    }
  }
  write_manifest(out / "manifest.jsonl", windows, data.vocab);
  data.vocab.save(out / "labels.txt");
  write_text(out / "preprocess.json", json(cfg).dump(2) + "\n");
  log.write(out, json(cfg), {{"data", data_dir}}, {{"dir", out.string()}, {"n_windows", count}}, 0);
  err << "wrote " << count << " windows to " << out.string() << "\n";
  return kExitOk;
}

template <typename T>
int run_train(const Globals& g, json doc, std::uint64_t seed, const std::string& out_dir,
              const std::string& resume, std::ostream& err) {
  RunLog log("train", g);
  const auto tc = doc.get<train::TrainConfig>();
  tc.validate();
  const fs::path out(out_dir);
  fs::create_directories(out);
  const auto data = load_data_dir(doc.at("data").value("dir", std::string()));
  const Prepared p = prepare(doc, data, seed);
  write_split_files(out, p, data.vocab);
  write_text(out / "config.json", doc.dump(2) + "\n");

  train::Checkpoint<T> start;
  if (!resume.empty()) {
    start = train::load_checkpoint<T>(resume);
    start.train_config.max_epochs = tc.max_epochs;
  } else {
    const auto mc = resolve_model(doc.at("model"), static_cast<int>(p.train.channels),
                                  static_cast<int>(p.label_names.size()));
    start = train::initial_checkpoint(nn::build_model<T>(mc, derive_seed(seed, {0x1417})), tc);
  }
  start.extra["document"] = doc;
  start.extra["label_names"] = p.label_names;

  try {
    const auto r = train::train(std::move(start), p.train, p.valid, progress<T>(err));
    save_outputs(out, r, r.best_updated || resume.empty());
    log.write(out, doc, {{"data", doc.at("data").value("dir", "")}, {"resume", resume}},
              {{"best", (out / "best.eckp").string()},
               {"last", (out / "last.eckp").string()},
               {"history", (out / "history.csv").string()},
               {"epochs", r.last.epoch},
               {"best_auroc", r.last.best_auroc}},
              seed);
  } catch (const train::TrainingDiverged<T>& e) {
    train::save_checkpoint(e.last_good(), out / "last.eckp");
    err << "error: " << e.what() << " (last good checkpoint saved)\n";
    log.write(out, doc, json::object(), {{"diverged", e.what()}}, seed);
    return kExitDiverged;
  }
  return kExitOk;
}

int cmd_train(const Globals& g, const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& resume, std::ostream& err) {
  json doc = resolve_document(train_document_defaults(train::TrainConfig{}), config_path, g);
  const std::uint64_t seed = resolve_seed(doc, g);
  if (!data_dir.empty()) doc["data"]["dir"] = data_dir;
  std::string precision = g.precision;
  if (!resume.empty()) precision = train::checkpoint_precision(resume);
  if (precision == "f64") return run_train<double>(g, doc, seed, out_dir, resume, err);
  return run_train<float>(g, doc, seed, out_dir, resume, err);
}

template <typename T>
int run_finetune(const Globals& g, json doc, std::uint64_t seed, const std::string& pretrained_path,
                 const std::string& out_dir, std::ostream& err) {
  RunLog log("finetune", g);
  const auto pre = train::load_checkpoint<T>(pretrained_path);
  const auto tc = doc.get<train::TrainConfig>();
  tc.validate();
  const fs::path out(out_dir);
  fs::create_directories(out);
  const auto data = load_data_dir(doc.at("data").value("dir", std::string()));
  const Prepared p = prepare(doc, data, seed);
  if (p.train.channels != static_cast<std::size_t>(pre.model.config.in_channels))
    throw ConfigError("pretrained model expects " + std::to_string(pre.model.config.in_channels) +
                      " channels, data has " + std::to_string(p.train.channels));
  write_split_files(out, p, data.vocab);
  write_text(out / "config.json", doc.dump(2) + "\n");
  try {
    auto r = train::finetune(pre, static_cast<int>(p.label_names.size()), tc, p.train, p.valid,
                             progress<T>(err));
    for (auto* c : {&r.best, &r.last}) {
      c->extra["document"] = doc;
      c->extra["label_names"] = p.label_names;
      c->extra["pretrained"] = pretrained_path;
    }
    save_outputs(out, r, true);
    log.write(out, doc, {{"checkpoint", pretrained_path}, {"data", doc.at("data").value("dir", "")}},
              {{"best", (out / "best.eckp").string()},
               {"last", (out / "last.eckp").string()},
               {"epochs", r.last.epoch},
               {"best_auroc", r.last.best_auroc}},
              seed);
  } catch (const train::TrainingDiverged<T>& e) {
    train::save_checkpoint(e.last_good(), out / "last.eckp");
    err << "error: " << e.what() << "\n";
    return kExitDiverged;
  }
  return kExitOk;
}

int cmd_finetune(const Globals& g, const std::string& ckpt, const std::string& config_path,
                 const std::string& data_dir, const std::string& out_dir, const std::string& mode,
                 std::ostream& err) {
  const auto m = train::parse_finetune_mode(mode);
  json defaults = train_document_defaults(train::TrainConfig::finetune_defaults(m));
  // Reuse the pretraining pipeline settings unless the config overrides them.
  const auto header = train::inspect_checkpoint(ckpt);
  if (header.contains("extra") && header["extra"].contains("document")) {
    const auto& pdoc = header["extra"]["document"];
    if (pdoc.contains("preprocess")) defaults["preprocess"] = pdoc["preprocess"];
    if (pdoc.contains("data") && pdoc["data"].contains("leads"))
      defaults["data"]["leads"] = pdoc["data"]["leads"];
    if (pdoc.contains("data") && pdoc["data"].contains("single_lead"))
      defaults["data"]["single_lead"] = pdoc["data"]["single_lead"];
  }
  json doc = resolve_document(defaults, config_path, g);
  doc["finetune_mode"] = train::to_string(m);
  const std::uint64_t seed = resolve_seed(doc, g);
  if (!data_dir.empty()) doc["data"]["dir"] = data_dir;
  if (header.value("precision", std::string("f32")) == "f64")
    return run_finetune<double>(g, doc, seed, ckpt, out_dir, err);
  return run_finetune<float>(g, doc, seed, ckpt, out_dir, err);
}

// Scores CSV: record_id,<label>,...
struct ScoreTable {
  std::vector<std::string> labels;
  std::map<std::string, std::vector<double>> rows;
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  return out;
}

ScoreTable read_scores(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty scores file");
  auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "record_id")
    throw FormatError("scores header must be record_id,<label>,...");
  ScoreTable t;
  t.labels.assign(header.begin() + 1, header.end());
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw FormatError("scores line " + std::to_string(lineno) + " has the wrong column count");
    std::vector<double> v;
    for (std::size_t k = 1; k < cells.size(); ++k) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(cells[k], &used));
        if (used != cells[k].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw FormatError("bad score '" + cells[k] + "' on line " + std::to_string(lineno));
      }
    }
    if (!t.rows.emplace(cells[0], std::move(v)).second)
      throw FormatError("duplicate record " + cells[0] + " in scores");
  }
  return t;
}

std::string scores_csv(const std::vector<std::string>& ids, const std::vector<std::string>& labels,
                       const std::vector<double>& probs) {
  std::string out = "record_id";
  for (const auto& l : labels) out += "," + l;
  out += "\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out += ids[i];
    for (std::size_t k = 0; k < labels.size(); ++k) out += "," + format_double(probs[i * labels.size() + k]);
    out += "\n";
  }
  return out;
}

template <typename T>
ScoreTable score_with_checkpoint(const fs::path& ckpt_path, const DataDir& data) {
  const auto ckpt = train::load_checkpoint<T>(ckpt_path);
  if (!ckpt.extra.contains("document") || !ckpt.extra.contains("label_names"))
    throw FormatError("checkpoint lacks its training document; cannot rebuild the pipeline");
  const auto& doc = ckpt.extra.at("document");
  const auto pre = doc.at("preprocess").template get<dsp::PreprocessConfig>();
  const auto names = ckpt.extra.at("label_names").template get<std::vector<std::string>>();
  const auto index = experiments::select_labels(data.vocab, names);
  const auto& dsec = doc.at("data");
  train::Dataset ds;
  if (dsec.contains("single_lead") && !dsec.at("single_lead").is_null()) {
    ds = experiments::make_single_lead_dataset(data.records, data.manifest, index, pre,
                                               {0.0, 0});
  } else {
    ds = experiments::make_dataset(data.records, data.manifest, index, pre,
                                   dsec.value("leads", standard_leads()));
  }
  const auto probs = train::predict(ckpt.model, ds);
  // Average window scores per source record.
  ScoreTable t;
  t.labels = names;
  std::map<std::string, std::size_t> counts;
  const std::size_t L = names.size();
  for (std::size_t i = 0; i < ds.n; ++i) {
    const std::string rid = ds.ids[i].substr(0, ds.ids[i].rfind("_w"));
    auto& row = t.rows[rid];
    if (row.empty()) row.assign(L, 0.0);
    for (std::size_t k = 0; k < L; ++k) row[k] += probs[i * L + k];
    counts[rid] += 1;
  }
  for (auto& [rid, row] : t.rows)
    for (auto& v : row) v /= static_cast<double>(counts[rid]);
  return t;
}

int cmd_eval(const Globals& g, const std::string& scores_path, const std::string& manifest_path,
             const std::string& labels_path, const std::string& ckpt_path,
             const std::string& data_dir, const std::string& out_path,
             const std::string& scores_out, const std::string& curves_dir, std::size_t n_boot,
             const std::string& policy, double threshold, std::ostream& err) {
  RunLog log("eval", g);
  const std::uint64_t seed = g.seed.value_or(0);
  LabelVocabulary vocab;
  Manifest manifest;
  ScoreTable table;
  if (!ckpt_path.empty()) {
    const auto data = load_data_dir(data_dir, manifest_path);
    table = train::checkpoint_precision(ckpt_path) == "f64"
                ? score_with_checkpoint<double>(ckpt_path, data)
                : score_with_checkpoint<float>(ckpt_path, data);
    vocab = data.vocab;
    manifest = data.manifest;
  } else {
    if (scores_path.empty() || manifest_path.empty())
      throw ConfigError("eval needs --scores and --manifest, or --checkpoint and --data");
    const fs::path lp = labels_path.empty() ? fs::path(manifest_path).parent_path() / "labels.txt"
                                            : fs::path(labels_path);
    vocab = LabelVocabulary::load(lp);
    manifest = read_manifest(manifest_path, vocab);
    table = read_scores(scores_path);
  }

  const auto index = experiments::select_labels(vocab, table.labels);
  const std::size_t L = index.size();
  std::vector<double> scores;
  std::vector<std::uint8_t> truth;
  std::vector<std::string> ids;
  for (const auto& e : manifest.entries) {
    auto it = table.rows.find(e.record_id);
    if (it == table.rows.end()) throw FormatError("no scores for record " + e.record_id);
    scores.insert(scores.end(), it->second.begin(), it->second.end());
    for (auto k : index) truth.push_back(e.labels.contains(k) ? 1 : 0);
    ids.push_back(e.record_id);
  }

  metrics::ReportConfig rc;
  rc.n_boot = n_boot;
  rc.seed = seed;
  rc.threshold = threshold;
  rc.workers = g.workers;
  if (policy == "youden") rc.policy = metrics::ThresholdPolicy::youden;
  else if (policy != "fixed") throw ConfigError("threshold policy must be fixed or youden");
  const auto report = metrics::build_report(scores, truth, table.labels, rc);
  json rep = report;
  rep["n_records"] = ids.size();
  write_text(out_path, rep.dump(2) + "\n");
  if (!scores_out.empty()) write_text(scores_out, scores_csv(ids, table.labels, scores));

  if (!curves_dir.empty()) {
    fs::create_directories(curves_dir);
    std::vector<double> s(ids.size());
    std::vector<std::uint8_t> y(ids.size());
    for (std::size_t k = 0; k < L; ++k) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        s[i] = scores[i * L + k];
        y[i] = truth[i * L + k];
      }
      std::string stem = table.labels[k];
      for (auto& c : stem)
        if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
      const auto pos = std::count(y.begin(), y.end(), 1);
      if (pos > 0 && pos < static_cast<long>(y.size()))
        write_text(fs::path(curves_dir) / ("roc_" + stem + ".csv"),
                   metrics::curve_csv(metrics::roc_curve(s, y), "fpr", "tpr"));
      if (pos > 0)
        write_text(fs::path(curves_dir) / ("pr_" + stem + ".csv"),
                   metrics::curve_csv(metrics::pr_curve(s, y), "recall", "precision"));
    }
  }
  log.write(out_path, {{"n_boot", n_boot}, {"policy", policy}, {"threshold", threshold}},
            {{"scores", scores_path}, {"manifest", manifest_path}, {"checkpoint", ckpt_path},
             {"data", data_dir}},
            {{"report", out_path}, {"scores", scores_out}, {"curves", curves_dir}}, seed);
  const auto& macro = report.macro.at(metrics::Metric::auroc);
  if (macro.point) err << "macro AUROC " << *macro.point << "\n";
  return kExitOk;
}

int cmd_ablate(const Globals& g, const std::string& study, const std::string& config_path,
               const std::string& out_dir, std::optional<std::size_t> seeds, std::ostream& err) {
  RunLog log("ablate", g);
  json doc = experiments::AblationSpec::defaults(experiments::parse_study(study));
  if (!config_path.empty()) {
    json file = read_json_file(config_path);
    if (file.contains("study") && file["study"] != study)
      throw ConfigError("config study differs from --study");
    file.erase("study");
    json grid = file.contains("grid") ? file["grid"] : json();
    file.erase("grid");
    doc.merge_patch(file);
    if (!grid.is_null()) doc["grid"] = grid;
  }
  for (const auto& s : g.sets) apply_override(doc, s);
  if (g.seed) doc["seed"] = *g.seed;
  doc["workers"] = g.workers;
  if (seeds) doc["n_seeds"] = *seeds;
  doc["output"] = out_dir;
  const auto spec = doc.get<experiments::AblationSpec>();
  const auto result = experiments::run_ablation(spec);
  for (const auto& f : result.failures) err << "failed run " << f << "\n";
  log.write(out_dir, json(spec), json::object(),
            {{"results", (fs::path(out_dir) / "results.csv").string()},
             {"summary", (fs::path(out_dir) / "summary.json").string()},
             {"failures", result.failures.size()}},
            spec.seed);
  for (const auto& v : result.summary["variants"]) {
    if (v.contains("metrics") && v["metrics"].contains("test_macro_auroc") &&
        v["metrics"]["test_macro_auroc"].contains("mean"))
      err << v["name"].get<std::string>() << "  test_macro_auroc mean "
          << v["metrics"]["test_macro_auroc"]["mean"].get<double>() << "\n";
  }
  return kExitOk;
}

int cmd_inspect(const std::string& path, std::ostream& out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  in.close();
  json j;
  if (std::string(magic, 4) == "ECGB") {
    const auto rec = read_record(path);
    j = {{"format", "ECGB"},
         {"version", kEcgbVersion},
         {"record_id", rec.record_id},
         {"patient_id", rec.patient_id},
         {"fs", rec.fs},
         {"lead_names", rec.lead_names},
         {"n_samples", rec.n_samples()},
         {"meta", rec.meta}};
  } else if (std::string(magic, 4) == "ECKP") {
    j = train::inspect_checkpoint(path);
  } else {
    throw FormatError(path + " is neither an ECGB record nor an ECKP checkpoint");
  }
  out << j.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  std::string pointer;
  std::istringstream parts(key);
  std::string part;
  while (std::getline(parts, part, '.')) {
    if (part.empty()) throw ConfigError("empty path component in " + key);
    std::string escaped;
    for (char c : part) {
      if (c == '~') escaped += "~0";
      else if (c == '/') escaped += "~1";
      else escaped += c;
    }
    pointer += "/" + escaped;
  }
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  try {
    config[json::json_pointer(pointer)] = value;
  } catch (const json::exception& e) {
    throw ConfigError("cannot apply override " + assignment + ": " + e.what());
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Desk-scale ECG foundation-model toolkit", "ecgf"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Seed for every random stream");
  app.add_option("--workers", g.workers, "Worker threads for bootstrap and ablation cells")
      ->check(CLI::PositiveNumber);
  app.add_option("--precision", g.precision, "Floating-point precision for training")
      ->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--set", g.sets, "Config override key.path=value (repeatable)");
  app.fallthrough();

  std::string out_path, config_path, data_dir, resume, ckpt, mode = "full";
  std::size_t n_records = 0;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic 12-lead cohort");
  synth->add_option("--out", out_path, "Output directory")->required();
  auto* n_opt = synth->add_option("--n", n_records, "Number of records");
  synth->add_option("--config", config_path, "Synthesis config JSON");

  auto* preprocess = app.add_subcommand("preprocess", "Filter, resample and window a cohort");
  preprocess->add_option("--data", data_dir, "Input cohort directory")->required();
  preprocess->add_option("--out", out_path, "Output directory")->required();
  preprocess->add_option("--config", config_path, "Preprocessing config JSON");

  auto* trn = app.add_subcommand("train", "Train a model from scratch");
  trn->add_option("--config", config_path, "Training config JSON");
  trn->add_option("--data", data_dir, "Cohort directory (overrides data.dir)");
  trn->add_option("--out", out_path, "Run directory")->required();
  trn->add_option("--resume", resume, "Continue from a saved last.eckp");

  auto* ft = app.add_subcommand("finetune", "Fine-tune a pretrained checkpoint on a new task");
  auto* probe = app.add_subcommand("probe", "Linear probe (finetune --mode linear_probe)");
  for (auto* sub : {ft, probe}) {
    sub->add_option("--checkpoint", ckpt, "Pretrained checkpoint")->required();
    sub->add_option("--config", config_path, "Fine-tuning config JSON");
    sub->add_option("--data", data_dir, "Cohort directory (overrides data.dir)");
    sub->add_option("--out", out_path, "Run directory")->required();
  }
  ft->add_option("--mode", mode, "linear_probe or full")
      ->check(CLI::IsMember({"linear_probe", "full"}));

  std::string scores_path, manifest_path, labels_path, scores_out, curves_dir, policy = "fixed";
  std::size_t n_boot = 1000;
  double threshold = 0.5;
  auto* ev = app.add_subcommand("eval", "Metrics with bootstrap intervals");
  ev->add_option("--scores", scores_path, "Scores CSV (record_id,<label>,...)");
  ev->add_option("--manifest", manifest_path, "Ground-truth manifest JSONL");
  ev->add_option("--labels", labels_path, "Label vocabulary (default: next to the manifest)");
  ev->add_option("--checkpoint", ckpt, "Score records with this model instead of --scores");
  ev->add_option("--data", data_dir, "Cohort directory for --checkpoint");
  ev->add_option("--out", out_path, "Report JSON")->required();
  ev->add_option("--scores-out", scores_out, "Write the evaluated scores as CSV");
  ev->add_option("--curves", curves_dir, "Directory for ROC and PR curve CSVs");
  ev->add_option("--n-boot", n_boot, "Bootstrap resamples (0 disables intervals)");
  ev->add_option("--threshold-policy", policy, "fixed or youden")
      ->check(CLI::IsMember({"fixed", "youden"}));
  ev->add_option("--threshold", threshold, "Fixed operating threshold");

  std::string study;
  std::size_t n_seeds = 0;
  auto* ab = app.add_subcommand("ablate", "Run a desk-scale ablation study");
  ab->add_option("--study", study, "loss, gamma, lead_aug or scale")
      ->required()
      ->check(CLI::IsMember({"loss", "gamma", "lead_aug", "scale"}));
  ab->add_option("--config", config_path, "Ablation spec JSON");
  ab->add_option("--out", out_path, "Output directory")->required();
  auto* seeds_opt = ab->add_option("--seeds", n_seeds, "Seeds per variant");

  std::string inspect_path;
  auto* insp = app.add_subcommand("inspect", "Print the header of an ECGB or ECKP file");
  insp->add_option("path", inspect_path, "File to inspect")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kExitOk;
    if (e.get_name() != "CallForHelp") err << app.help();
    return kExitUsage;
  }
  if (*seed_opt) g.seed = seed_value;

  try {
    if (*synth)
      return cmd_synth(g, out_path, *n_opt ? std::optional<std::size_t>(n_records) : std::nullopt,
                       config_path, err);
    if (*preprocess) return cmd_preprocess(g, data_dir, out_path, config_path, err);
    if (*trn) return cmd_train(g, config_path, data_dir, out_path, resume, err);
    if (*ft) return cmd_finetune(g, ckpt, config_path, data_dir, out_path, mode, err);
    if (*probe) return cmd_finetune(g, ckpt, config_path, data_dir, out_path, "linear_probe", err);
    if (*ev)
      return cmd_eval(g, scores_path, manifest_path, labels_path, ckpt, data_dir, out_path,
                      scores_out, curves_dir, n_boot, policy, threshold, err);
    if (*ab)
      return cmd_ablate(g, study, config_path, out_path,
                        *seeds_opt ? std::optional<std::size_t>(n_seeds) : std::nullopt, err);
    if (*insp) return cmd_inspect(inspect_path, out);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const json::exception& e) {
    err << "error: invalid configuration: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace ecgf::cli

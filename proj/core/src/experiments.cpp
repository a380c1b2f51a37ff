#include "ecgf/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "ecgf/error.hpp"
#include "ecgf/metrics.hpp"
#include "ecgf/rng.hpp"

namespace ecgf::experiments {

Manifest corrupt_labels(const Manifest& manifest, double deletion_rate, std::uint64_t seed) {
  if (!(deletion_rate >= 0 && deletion_rate < 1))
    throw ConfigError("deletion_rate must lie in [0, 1)");
  Manifest out = manifest;
  for (std::size_t i = 0; i < out.entries.size(); ++i) {
    Rng rng(derive_seed(seed, {i}));
    auto& pos = out.entries[i].labels.positives;
    for (auto it = pos.begin(); it != pos.end();) {
      if (uniform01(rng) < deletion_rate) it = pos.erase(it);
      else ++it;
    }
  }
  return out;
}

std::size_t count_positives(const Manifest& manifest) {
  std::size_t n = 0;
  for (const auto& e : manifest.entries) n += e.labels.positives.size();
  return n;
}

std::vector<std::size_t> select_labels(const LabelVocabulary& vocab,
                                       const std::vector<std::string>& names) {
  std::vector<std::size_t> idx;
  if (names.empty()) {
    for (std::size_t i = 0; i < vocab.size(); ++i) idx.push_back(i);
  } else {
    for (const auto& n : names) idx.push_back(vocab.index(n));
  }
  return idx;
}

namespace {

std::unordered_map<std::string, const EcgRecord*> index_records(const std::vector<EcgRecord>& records) {
  std::unordered_map<std::string, const EcgRecord*> m;
  for (const auto& r : records) m.emplace(r.record_id, &r);
  return m;
}

const EcgRecord& find_record(const std::unordered_map<std::string, const EcgRecord*>& m,
                             const std::string& id) {
  auto it = m.find(id);
  if (it == m.end()) throw FormatError("manifest references missing record " + id);
  return *it->second;
}

void append_labels(train::Dataset& d, const LabelSet& labels,
                   std::span<const std::size_t> label_index) {
  for (auto k : label_index) d.y.push_back(labels.contains(k) ? 1 : 0);
}

train::Dataset::Transform lead_transform(const hexaxial::AugmentPolicy& policy,
                                         std::size_t length) {
  return [policy, length](std::uint64_t key, std::size_t index, std::span<const float> source,
                          std::span<float> out) {
    Rng rng(derive_seed(policy.seed, {key, index}));
    const auto& lead = hexaxial::kFrontalLeads[hexaxial::sample_lead_index(policy, rng)];
    for (std::size_t k = 0; k < length; ++k)
      out[k] = static_cast<float>(lead.coeff_i * static_cast<double>(source[k]) +
                                  lead.coeff_ii * static_cast<double>(source[length + k]));
    dsp::zscore_inplace(out);
  };
}

}  // namespace

train::Dataset make_dataset(const std::vector<EcgRecord>& records, const Manifest& manifest,
                            std::span<const std::size_t> label_index,
                            const dsp::PreprocessConfig& cfg,
                            std::span<const std::string> leads) {
  const auto by_id = index_records(records);
  train::Dataset d;
  d.source_channels = d.channels = leads.size();
  d.length = cfg.window_samples();
  d.n_labels = label_index.size();
  for (const auto& e : manifest.entries) {
    for (const auto& seg : dsp::preprocess(find_record(by_id, e.record_id), cfg, leads)) {
      d.x.insert(d.x.end(), seg.data.begin(), seg.data.end());
      append_labels(d, e.labels, label_index);
      d.ids.push_back(seg.record_id + "_w" + std::to_string(seg.window_index));
      ++d.n;
    }
  }
  d.validate();
  return d;
}

train::Dataset make_single_lead_dataset(const std::vector<EcgRecord>& records,
                                        const Manifest& manifest,
                                        std::span<const std::size_t> label_index,
                                        const dsp::PreprocessConfig& cfg,
                                        const hexaxial::AugmentPolicy& policy) {
  policy.validate();
  const auto by_id = index_records(records);
  const std::vector<std::string> leads{"I", "II"};
  train::Dataset d;
  d.source_channels = 2;
  d.channels = 1;
  d.length = cfg.window_samples();
  d.n_labels = label_index.size();
  for (const auto& e : manifest.entries) {
    const auto& rec = find_record(by_id, e.record_id);
    if (!rec.lead_index("I") || !rec.lead_index("II"))
      throw FormatError("record " + rec.record_id + " lacks lead I or II");
    for (const auto& seg : dsp::preprocess_unnormalized(rec, cfg, leads)) {
      d.x.insert(d.x.end(), seg.data.begin(), seg.data.end());
      append_labels(d, e.labels, label_index);
      d.ids.push_back(seg.record_id + "_w" + std::to_string(seg.window_index));
      ++d.n;
    }
  }
  d.transform = lead_transform(policy, d.length);
  d.validate();
  return d;
}

void set_lead_policy(train::Dataset& data, const hexaxial::AugmentPolicy& policy) {
  policy.validate();
  if (data.source_channels != 2 || data.channels != 1)
    throw ConfigError("not a single-lead dataset");
  data.transform = lead_transform(policy, data.length);
}

std::string_view to_string(Study s) {
  switch (s) {
    case Study::loss: return "loss";
    case Study::gamma: return "gamma";
    case Study::lead_aug: return "lead_aug";
    case Study::scale: return "scale";
  }
  return "loss";
}

Study parse_study(std::string_view name) {
  for (Study s : {Study::loss, Study::gamma, Study::lead_aug, Study::scale})
    if (to_string(s) == name) return s;
  throw ConfigError("unknown study " + std::string(name));
}

void AblationSpec::validate() const {
  if (n_seeds < 1) throw ConfigError("n_seeds must be >= 1");
  if (!(deletion_rate >= 0 && deletion_rate < 1))
    throw ConfigError("deletion_rate must lie in [0, 1)");
  if (grid.empty()) throw ConfigError("ablation grid is empty");
  if (!(lead_aug_p >= 0 && lead_aug_p <= 1)) throw ConfigError("lead_aug_p must lie in [0, 1]");
  synth.validate();
  preprocess.validate();
  train.validate();
}

AblationSpec AblationSpec::defaults(Study study) {
  AblationSpec s;
  s.study = study;
  s.synth.n_records = 600;
  s.synth.heart_rate_min_bpm = 40;
  s.synth.heart_rate_max_bpm = 140;
  s.synth.irregular_fraction = 0.2;
  s.synth.mean_qrs_axis_deg = 30;
  s.synth.axis_spread_deg = 100;
  s.synth.noise_mv = 0.02;
  s.preprocess.target_fs = 125;
  s.preprocess.lp_cutoff = 40;
  s.preprocess.notch_freqs = {50};
  s.split = {0.6, 0.1, 0.3};
  s.train.lr0 = 3e-3;
  s.train.min_lr = 1e-5;
  s.train.batch_size = 32;
  s.train.max_epochs = 12;
  s.train.early_stop_patience = 0;
  s.train.schedule.period_epochs = 8;
  s.train.adam.weight_decay = 0.01;
  const auto loss_variant = [](const char* name, nlohmann::json loss) {
    return Variant{name, {{"train", {{"loss", std::move(loss)}}}}};
  };
  switch (study) {
    case Study::loss:
      s.grid = {loss_variant("bce", {{"kind", "bce"}}), loss_variant("focal", {{"kind", "focal"}}),
                loss_variant("pu", {{"kind", "pu"}})};
      break;
    case Study::gamma:
      for (double g : {0.5, 1.0, 1.5, 2.0}) {
        std::ostringstream name;
        name << "gamma_" << g;
        s.grid.push_back(loss_variant(name.str().c_str(), {{"kind", "pu"}, {"gamma_pu", g}}));
      }
      break;
    case Study::lead_aug:
      s.deletion_rate = 0;
      s.grid = {Variant{"lead_i_only", {{"lead_aug", {{"p_augment", 0.0}}}}},
                Variant{"axis_augmented", {{"lead_aug", {{"p_augment", 0.5}}}}}};
      break;
    case Study::scale:
      s.deletion_rate = 0;
      s.n_seeds = 2;
      s.grid = {Variant{"micro_n25", {{"data", {{"train_fraction", 0.25}}}}},
                Variant{"micro_n50", {{"data", {{"train_fraction", 0.5}}}}},
                Variant{"micro_n100", {{"data", {{"train_fraction", 1.0}}}}},
                Variant{"desk_n100", {{"model", {{"preset", "desk"}}}}}};
      break;
  }
  return s;
}

void to_json(nlohmann::json& j, const AblationSpec& s) {
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& v : s.grid) grid.push_back({{"name", v.name}, {"overrides", v.overrides}});
  j = {{"study", to_string(s.study)},
       {"grid", grid},
       {"n_seeds", s.n_seeds},
       {"deletion_rate", s.deletion_rate},
       {"seed", s.seed},
       {"synth", s.synth},
       {"preprocess", s.preprocess},
       {"split", {{"train", s.split.train}, {"valid", s.split.valid}, {"test", s.split.test}}},
       {"labels", s.labels},
       {"model_preset", s.model_preset},
       {"train", s.train},
       {"lead_aug_p", s.lead_aug_p},
       {"workers", s.workers},
       {"n_boot", s.n_boot},
       {"output", s.output.string()}};
}

void from_json(const nlohmann::json& j, AblationSpec& s) {
  s = AblationSpec::defaults(parse_study(j.value("study", std::string("loss"))));
  if (j.contains("grid")) {
    s.grid.clear();
    for (const auto& v : j.at("grid"))
      s.grid.push_back({v.at("name").get<std::string>(),
                        v.value("overrides", nlohmann::json::object())});
  }
  s.n_seeds = j.value("n_seeds", s.n_seeds);
  s.deletion_rate = j.value("deletion_rate", s.deletion_rate);
  s.seed = j.value("seed", s.seed);
  if (j.contains("synth")) {
    nlohmann::json base = s.synth;
    base.merge_patch(j.at("synth"));
    s.synth = base.get<SynthConfig>();
  }
  if (j.contains("preprocess")) {
    nlohmann::json base = s.preprocess;
    base.merge_patch(j.at("preprocess"));
    s.preprocess = base.get<dsp::PreprocessConfig>();
  }
  if (j.contains("split")) {
    const auto& sp = j.at("split");
    s.split = {sp.value("train", s.split.train), sp.value("valid", s.split.valid),
               sp.value("test", s.split.test)};
  }
  s.labels = j.value("labels", s.labels);
  s.model_preset = j.value("model_preset", s.model_preset);
  if (j.contains("train")) {
    nlohmann::json base = s.train;
    base.merge_patch(j.at("train"));
    s.train = base.get<train::TrainConfig>();
  }
  s.lead_aug_p = j.value("lead_aug_p", s.lead_aug_p);
  s.workers = j.value("workers", s.workers);
  s.n_boot = j.value("n_boot", s.n_boot);
  s.output = j.value("output", s.output.string());
}

namespace {

struct SeedData {
  LabelVocabulary vocab;
  std::vector<std::size_t> label_index;
  train::Dataset train, valid, test;
  train::Dataset test_lead_i;  // single-lead studies only
};

train::Dataset head_subset(const train::Dataset& d, std::size_t n) {
  train::Dataset out = d;
  n = std::min(n, d.n);
  out.n = n;
  out.x.resize(n * d.source_channels * d.length);
  out.y.resize(n * d.n_labels);
  if (!out.ids.empty()) out.ids.resize(n);
  return out;
}

SeedData prepare_seed(const AblationSpec& spec, std::size_t s) {
  SynthConfig sc = spec.synth;
  sc.seed = derive_seed(spec.seed, {s, 1});
  const auto cohort = generate_synthetic(sc);
  const auto parts = patient_split(cohort.manifest, spec.split, derive_seed(spec.seed, {s, 2}));
  const Manifest train_labels =
      corrupt_labels(parts[0], spec.deletion_rate, derive_seed(spec.seed, {s, 3}));
  const Manifest valid_labels =
      corrupt_labels(parts[1], spec.deletion_rate, derive_seed(spec.seed, {s, 5}));

  SeedData d;
  d.vocab = cohort.vocab;
  d.label_index = select_labels(cohort.vocab, spec.labels);
  if (spec.study == Study::lead_aug) {
    hexaxial::AugmentPolicy train_policy{spec.lead_aug_p, derive_seed(spec.seed, {s, 6})};
    d.train = make_single_lead_dataset(cohort.records, train_labels, d.label_index,
                                       spec.preprocess, train_policy);
    // Validation and test draw every frontal lead with equal probability.
    d.valid = make_single_lead_dataset(cohort.records, valid_labels, d.label_index,
                                       spec.preprocess, {6.0 / 7.0, derive_seed(spec.seed, {s, 7})});
    d.test = make_single_lead_dataset(cohort.records, parts[2], d.label_index, spec.preprocess,
                                      {6.0 / 7.0, derive_seed(spec.seed, {s, 8})});
    d.test_lead_i = d.test;
    set_lead_policy(d.test_lead_i, {0.0, 0});
  } else {
    const auto& leads = standard_leads();
    d.train = make_dataset(cohort.records, train_labels, d.label_index, spec.preprocess, leads);
    d.valid = make_dataset(cohort.records, valid_labels, d.label_index, spec.preprocess, leads);
    d.test = make_dataset(cohort.records, parts[2], d.label_index, spec.preprocess, leads);
  }
  return d;
}

std::vector<std::size_t> label_positions(const SeedData& d, const std::vector<std::string>& names) {
  std::vector<std::size_t> pos;
  for (const auto& name : names) {
    const auto v = d.vocab.index(name);
    auto it = std::find(d.label_index.begin(), d.label_index.end(), v);
    if (it != d.label_index.end())
      pos.push_back(static_cast<std::size_t>(it - d.label_index.begin()));
  }
  return pos;
}

std::optional<double> macro_over(std::span<const double> probs, const train::Dataset& data,
                                 std::span<const std::size_t> columns, metrics::Metric metric) {
  const std::size_t L = data.n_labels;
  std::vector<double> s(data.n);
  std::vector<std::uint8_t> y(data.n);
  double total = 0;
  std::size_t defined = 0;
  for (auto k : columns) {
    for (std::size_t i = 0; i < data.n; ++i) {
      s[i] = probs[i * L + k];
      y[i] = data.y[i * L + k];
    }
    if (auto v = metrics::compute_metric(metric, s, y, 0.5)) {
      total += *v;
      ++defined;
    }
  }
  if (defined == 0) return std::nullopt;
  return total / static_cast<double>(defined);
}

struct CellOutcome {
  std::vector<std::pair<std::string, double>> metrics;
  std::string failure;
};

CellOutcome run_cell(const AblationSpec& spec, const Variant& variant, std::size_t s,
                     const SeedData& data) {
  CellOutcome out;
  const auto& ov = variant.overrides;
  nlohmann::json train_json = spec.train;
  if (ov.contains("train")) train_json.merge_patch(ov.at("train"));
  auto tc = train_json.get<train::TrainConfig>();
  tc.seed = derive_seed(spec.seed, {s, 4});

  std::string preset = spec.model_preset;
  nlohmann::json model_patch = nlohmann::json::object();
  if (ov.contains("model")) {
    model_patch = ov.at("model");
    if (model_patch.contains("preset")) {
      preset = model_patch.at("preset").get<std::string>();
      model_patch.erase("preset");
    }
  }
  const int in_ch = static_cast<int>(data.train.channels);
  const int n_cls = static_cast<int>(data.train.n_labels);
  nlohmann::json model_json = nn::ModelConfig::preset(preset, in_ch, n_cls);
  model_json.merge_patch(model_patch);
  const auto mc = model_json.get<nn::ModelConfig>();

  double fraction = 1.0;
  if (ov.contains("data")) fraction = ov.at("data").value("train_fraction", 1.0);
  if (!(fraction > 0 && fraction <= 1)) throw ConfigError("train_fraction must lie in (0, 1]");

  train::Dataset train_set = data.train;
  if (fraction < 1.0)
    train_set = head_subset(data.train, static_cast<std::size_t>(
                                             std::floor(fraction * static_cast<double>(data.train.n))));
  if (spec.study == Study::lead_aug) {
    const double p = ov.contains("lead_aug") ? ov.at("lead_aug").value("p_augment", spec.lead_aug_p)
                                             : spec.lead_aug_p;
    set_lead_policy(train_set, {p, derive_seed(spec.seed, {s, 6})});
  }

  try {
    auto model = nn::build_model<float>(mc, derive_seed(tc.seed, {0x1417}));
    auto result = train::train(train::initial_checkpoint(std::move(model), tc), train_set,
                               data.valid);
    const auto& best = result.best.model;
    const auto probs = train::predict(best, data.test, tc.batch_size);
    std::vector<std::size_t> all(data.test.n_labels);
    for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
    const auto nan = std::numeric_limits<double>::quiet_NaN();
    out.metrics.emplace_back("test_macro_auroc",
                             macro_over(probs, data.test, all, metrics::Metric::auroc).value_or(nan));
    out.metrics.emplace_back("test_macro_auprc",
                             macro_over(probs, data.test, all, metrics::Metric::auprc).value_or(nan));
    if (spec.study == Study::lead_aug) {
      const auto axis = label_positions(data, {"left axis deviation", "right axis deviation"});
      out.metrics.emplace_back("axis_macro_auroc",
                               macro_over(probs, data.test, axis, metrics::Metric::auroc).value_or(nan));
      const auto probs_i = train::predict(best, data.test_lead_i, tc.batch_size);
      out.metrics.emplace_back(
          "axis_macro_auroc_lead_i",
          macro_over(probs_i, data.test_lead_i, axis, metrics::Metric::auroc).value_or(nan));
      out.metrics.emplace_back(
          "test_macro_auroc_lead_i",
          macro_over(probs_i, data.test_lead_i, all, metrics::Metric::auroc).value_or(nan));
    }
    if (spec.n_boot > 0) {
      const auto stat = [&](std::span<const std::size_t> rows) -> std::optional<double> {
        train::Dataset sub;
        sub.n = rows.size();
        sub.n_labels = data.test.n_labels;
        std::vector<double> p;
        for (auto r : rows) {
          p.insert(p.end(), probs.begin() + r * sub.n_labels, probs.begin() + (r + 1) * sub.n_labels);
          const auto l = data.test.labels(r);
          sub.y.insert(sub.y.end(), l.begin(), l.end());
        }
        return macro_over(p, sub, all, metrics::Metric::auroc);
      };
      const auto ci = metrics::bootstrap(data.test.n, stat, spec.n_boot, derive_seed(spec.seed, {s, 9}));
      out.metrics.emplace_back("test_macro_auroc_ci_low", ci.low);
      out.metrics.emplace_back("test_macro_auroc_ci_high", ci.high);
    }
    out.metrics.emplace_back("valid_best_auroc", result.best.best_auroc);
    out.metrics.emplace_back("best_epoch", static_cast<double>(result.best.best_epoch));
    out.metrics.emplace_back("epochs_run", static_cast<double>(result.last.epoch));
    out.metrics.emplace_back("n_params", static_cast<double>(nn::count_params(mc)));
    out.metrics.emplace_back("n_train", static_cast<double>(train_set.n));
  } catch (const Error& e) {
    out.metrics.clear();
    out.failure = e.what();
  }
  return out;
}

std::string format_value(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

AblationResult run_ablation(const AblationSpec& spec) {
  spec.validate();
  const std::size_t V = spec.grid.size();
  std::vector<CellOutcome> cells(V * spec.n_seeds);

  for (std::size_t s = 0; s < spec.n_seeds; ++s) {
    const SeedData data = prepare_seed(spec, s);
    std::size_t next = 0;
    std::mutex mu;
    const auto worker = [&] {
      for (;;) {
        std::size_t v;
        {
          std::lock_guard lock(mu);
          if (next >= V) return;
          v = next++;
        }
        cells[v * spec.n_seeds + s] = run_cell(spec, spec.grid[v], s, data);
      }
    };
    const std::size_t workers = std::clamp<std::size_t>(spec.workers, 1, V);
    if (workers == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }
  }

  AblationResult result;
  const std::string study(to_string(spec.study));
  for (std::size_t v = 0; v < V; ++v) {
    for (std::size_t s = 0; s < spec.n_seeds; ++s) {
      const auto& cell = cells[v * spec.n_seeds + s];
      if (!cell.failure.empty())
        result.failures.push_back(spec.grid[v].name + "/" + std::to_string(s) + ": " + cell.failure);
      for (const auto& [metric, value] : cell.metrics)
        result.rows.push_back({study, spec.grid[v].name, s, metric, value});
    }
  }
  result.summary = summarize(spec, result.rows, result.failures);

  if (!spec.output.empty()) {
    std::filesystem::create_directories(spec.output);
    const auto write = [&](const char* name, const std::string& text) {
      std::ofstream out(spec.output / name, std::ios::binary | std::ios::trunc);
      if (!out) throw FormatError("cannot write " + (spec.output / name).string());
      out << text;
    };
    write("results.csv", results_csv(result.rows));
    write("summary.json", result.summary.dump(2) + "\n");
  }
  return result;
}

std::string results_csv(std::span<const ResultRow> rows) {
  std::string out = "study,variant,seed,metric,value\n";
  for (const auto& r : rows)
    out += r.study + "," + r.variant + "," + std::to_string(r.seed) + "," + r.metric + "," +
           format_value(r.value) + "\n";
  return out;
}

std::vector<double> collect(std::span<const ResultRow> rows, std::string_view variant,
                            std::string_view metric) {
  std::vector<std::pair<std::size_t, double>> found;
  for (const auto& r : rows)
    if (r.variant == variant && r.metric == metric) found.emplace_back(r.seed, r.value);
  std::sort(found.begin(), found.end());
  std::vector<double> out;
  for (const auto& f : found) out.push_back(f.second);
  return out;
}

nlohmann::json summarize(const AblationSpec& spec, std::span<const ResultRow> rows,
                         std::span<const std::string> failures) {
  nlohmann::json j;
  j["study"] = to_string(spec.study);
  j["spec"] = spec;
  j["failures"] = std::vector<std::string>(failures.begin(), failures.end());
  auto& variants = j["variants"] = nlohmann::json::array();
  for (const auto& v : spec.grid) {
    std::vector<std::string> metric_names;
    for (const auto& r : rows)
      if (r.variant == v.name &&
          std::find(metric_names.begin(), metric_names.end(), r.metric) == metric_names.end())
        metric_names.push_back(r.metric);
    nlohmann::json entry = {{"name", v.name}, {"overrides", v.overrides}};
    for (const auto& m : metric_names) {
      auto vals = collect(rows, v.name, m);
      std::vector<double> finite;
      for (double x : vals)
        if (std::isfinite(x)) finite.push_back(x);
      if (finite.empty()) {
        entry["metrics"][m] = {{"n", 0}};
        continue;
      }
      std::sort(finite.begin(), finite.end());
      double mean = 0;
      for (double x : finite) mean += x;
      mean /= static_cast<double>(finite.size());
      entry["metrics"][m] = {{"n", finite.size()},
                             {"mean", mean},
                             {"median", metrics::percentile(finite, 0.5)},
                             {"min", finite.front()},
                             {"max", finite.back()}};
    }
    variants.push_back(std::move(entry));
  }
  return j;
}

}  // namespace ecgf::experiments

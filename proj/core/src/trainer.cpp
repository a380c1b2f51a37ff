#include "ecgf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ecgf/metrics.hpp"
#include "ecgf/rng.hpp"

namespace ecgf::train {

std::string_view to_string(FinetuneMode mode) {
  switch (mode) {
    case FinetuneMode::none: return "none";
    case FinetuneMode::linear_probe: return "linear_probe";
    case FinetuneMode::full: return "full";
  }
  return "none";
}

FinetuneMode parse_finetune_mode(std::string_view name) {
  if (name == "none") return FinetuneMode::none;
  if (name == "linear_probe" || name == "probe") return FinetuneMode::linear_probe;
  if (name == "full") return FinetuneMode::full;
  throw ConfigError("unknown finetune mode " + std::string(name));
}

void TrainConfig::validate() const {
  loss.validate();
  adam.validate();
  if (!(min_lr > 0)) throw ConfigError("min_lr must be positive");
  if (!(lr0 > min_lr)) throw ConfigError("lr0 must exceed min_lr");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (schedule.period_epochs < 1) throw ConfigError("schedule period must be >= 1");
}

TrainConfig TrainConfig::finetune_defaults(FinetuneMode mode) {
  TrainConfig c;
  c.schedule.kind = ScheduleKind::plateau;
  c.schedule.patience_epochs = 10;
  c.max_epochs = 30;
  c.min_lr = 1e-6;
  c.early_stop_patience = 0;
  c.finetune_mode = mode;
  return c;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"loss", c.loss},
       {"optimizer",
        {{"lr0", c.lr0},
         {"min_lr", c.min_lr},
         {"beta1", c.adam.beta1},
         {"beta2", c.adam.beta2},
         {"eps", c.adam.eps},
         {"weight_decay", c.adam.weight_decay}}},
       {"schedule", c.schedule},
       {"max_epochs", c.max_epochs},
       {"batch_size", c.batch_size},
       {"early_stop_patience", c.early_stop_patience},
       {"seed", c.seed},
       {"finetune_mode", to_string(c.finetune_mode)}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c = d;
  if (j.contains("loss")) c.loss = j.at("loss").get<loss::LossConfig>();
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    c.lr0 = o.value("lr0", d.lr0);
    c.min_lr = o.value("min_lr", d.min_lr);
    c.adam.beta1 = o.value("beta1", d.adam.beta1);
    c.adam.beta2 = o.value("beta2", d.adam.beta2);
    c.adam.eps = o.value("eps", d.adam.eps);
    c.adam.weight_decay = o.value("weight_decay", d.adam.weight_decay);
  }
  if (j.contains("schedule")) c.schedule = j.at("schedule").get<ScheduleConfig>();
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.early_stop_patience = j.value("early_stop_patience", d.early_stop_patience);
  c.seed = j.value("seed", d.seed);
  c.finetune_mode = parse_finetune_mode(j.value("finetune_mode", std::string("none")));
}

void Dataset::validate() const {
  if (x.size() != n * source_channels * length) throw ConfigError("dataset signal buffer size");
  if (y.size() != n * n_labels) throw ConfigError("dataset label buffer size");
  if (!ids.empty() && ids.size() != n) throw ConfigError("dataset id count");
  if (!transform && source_channels != channels)
    throw ConfigError("dataset channel change requires a transform");
  for (auto v : y)
    if (v > 1) throw ConfigError("labels must be 0 or 1");
}

void Dataset::load(std::uint64_t key, std::size_t i, std::span<float> out) const {
  if (transform) {
    transform(key, i, sample(i), out);
  } else {
    const auto s = sample(i);
    std::copy(s.begin(), s.end(), out.begin());
  }
}

std::string history_csv(std::span<const HistoryRow> history) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,train_loss,valid_loss,valid_auroc,lr\n";
  for (const auto& r : history)
    out << r.epoch << ',' << r.train_loss << ',' << r.valid_loss << ',' << r.valid_auroc << ','
        << r.lr << '\n';
  return out.str();
}

std::vector<std::uint8_t> trainable_mask(const nn::ModelConfig& config,
                                         const std::vector<std::string>& names, FinetuneMode mode) {
  std::vector<std::uint8_t> mask(names.size(), 1);
  if (mode != FinetuneMode::linear_probe) return mask;
  const auto head = nn::head_param_names(config);
  for (std::size_t i = 0; i < names.size(); ++i)
    mask[i] = std::find(head.begin(), head.end(), names[i]) != head.end() ? 1 : 0;
  return mask;
}

namespace {

std::string save_rng(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

Rng load_rng(const std::string& state) {
  Rng rng;
  std::istringstream in(state);
  in >> rng;
  if (!in) throw FormatError("corrupt RNG state");
  return rng;
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[uniform_index(rng, i)]);
  return p;
}

template <typename T>
nn::Tensor3<T> assemble(const Dataset& data, std::span<const std::size_t> rows, std::uint64_t key) {
  nn::Tensor3<T> x(rows.size(), data.channels, data.length);
  std::vector<float> buf(data.channels * data.length);
  for (std::size_t b = 0; b < rows.size(); ++b) {
    data.load(key, rows[b], buf);
    std::copy(buf.begin(), buf.end(), x.sample(b));
  }
  return x;
}

std::vector<std::uint8_t> gather_labels(const Dataset& data, std::span<const std::size_t> rows) {
  std::vector<std::uint8_t> y;
  y.reserve(rows.size() * data.n_labels);
  for (auto r : rows) {
    const auto l = data.labels(r);
    y.insert(y.end(), l.begin(), l.end());
  }
  return y;
}

template <typename T>
std::vector<T> gather_rows(const std::vector<T>& m, std::size_t width,
                           std::span<const std::size_t> rows) {
  std::vector<T> out;
  out.reserve(rows.size() * width);
  for (auto r : rows) out.insert(out.end(), m.begin() + r * width, m.begin() + (r + 1) * width);
  return out;
}

double epoch_average(double total, std::size_t n, loss::Reduction reduction) {
  return reduction == loss::Reduction::mean ? total / static_cast<double>(n) : total;
}

void check_compat(const nn::ModelConfig& cfg, const Dataset& d, const char* which) {
  d.validate();
  if (d.n == 0) return;
  if (d.channels != static_cast<std::size_t>(cfg.in_channels))
    throw ConfigError(std::string(which) + " set has " + std::to_string(d.channels) +
                      " channels, model expects " + std::to_string(cfg.in_channels));
  if (d.n_labels != static_cast<std::size_t>(cfg.n_classes))
    throw ConfigError(std::string(which) + " set has " + std::to_string(d.n_labels) +
                      " labels, model head has " + std::to_string(cfg.n_classes));
}

}  // namespace

template <typename T>
std::vector<T> extract_features(const nn::Model<T>& model, const Dataset& data,
                                std::size_t batch_size) {
  const std::size_t f = static_cast<std::size_t>(model.config.feature_width());
  std::vector<T> out;
  out.reserve(data.n * f);
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < data.n; start += batch_size) {
    rows.clear();
    for (std::size_t i = start; i < std::min(data.n, start + batch_size); ++i) rows.push_back(i);
    const auto fr = nn::forward_eval(model, assemble<T>(data, rows, kEvalKey));
    out.insert(out.end(), fr.features.begin(), fr.features.end());
  }
  return out;
}

template <typename T>
std::vector<double> predict(const nn::Model<T>& model, const Dataset& data, std::size_t batch_size) {
  check_compat(model.config, data, "evaluation");
  std::vector<double> out;
  out.reserve(data.n * data.n_labels);
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < data.n; start += batch_size) {
    rows.clear();
    for (std::size_t i = start; i < std::min(data.n, start + batch_size); ++i) rows.push_back(i);
    const auto fr = nn::forward_eval(model, assemble<T>(data, rows, kEvalKey));
    for (T z : fr.logits) out.push_back(loss::sigmoid(static_cast<double>(z)));
  }
  return out;
}

template <typename T>
Checkpoint<T> initial_checkpoint(nn::Model<T> model, const TrainConfig& cfg) {
  cfg.validate();
  Checkpoint<T> c;
  c.train_config = cfg;
  c.optimizer = make_optimizer(model.params, cfg.adam);
  c.model = std::move(model);
  c.rng_state = save_rng(Rng(derive_seed(cfg.seed, {0x5eed})));
  return c;
}

template <typename T>
TrainResult<T> train(Checkpoint<T> start, const Dataset& train_set, const Dataset& valid_set,
                     const EpochCallback& on_epoch) {
  const TrainConfig cfg = start.train_config;
  cfg.validate();
  check_compat(start.model.config, train_set, "training");
  check_compat(start.model.config, valid_set, "validation");
  if (train_set.n == 0) throw ConfigError("empty training set");

  const bool probe = cfg.finetune_mode == FinetuneMode::linear_probe;
  const auto mask = trainable_mask(start.model.config, start.model.params.names(), cfg.finetune_mode);
  const std::size_t L = train_set.n_labels;
  const std::size_t F = static_cast<std::size_t>(start.model.config.feature_width());

  std::vector<T> train_feats, valid_feats;
  if (probe) {
    train_feats = extract_features(start.model, train_set, cfg.batch_size);
    valid_feats = extract_features(start.model, valid_set, cfg.batch_size);
  }

  Checkpoint<T> cur = std::move(start);
  Rng rng = load_rng(cur.rng_state);
  TrainResult<T> res;
  bool have_best = false;

  // Replay monitors so a resumed run continues the same trajectory.
  EarlyStopping stopper(cfg.early_stop_patience);
  bool stopped = false;
  std::vector<double> auroc_history;
  for (const auto& row : cur.history) {
    auroc_history.push_back(row.valid_auroc);
    if (valid_set.n > 0) stopped = stopper.update(row.valid_loss);
  }
  auto last_good = std::make_shared<const Checkpoint<T>>(cur);

  for (std::size_t epoch = cur.epoch; epoch < cfg.max_epochs && !stopped; ++epoch) {
    const double lr = schedule_lr(cfg.schedule, cfg.lr0, cfg.min_lr, epoch, auroc_history);
    const auto order = permutation(train_set.n, rng);
    double total = 0;
    for (std::size_t s = 0; s < train_set.n; s += cfg.batch_size) {
      const std::span<const std::size_t> rows(order.data() + s,
                                              std::min(cfg.batch_size, train_set.n - s));
      const auto y = gather_labels(train_set, rows);
      nn::ParamStore<T> grads;
      double value = 0;
      if (probe) {
        const auto feats = gather_rows(train_feats, F, rows);
        const auto logits = nn::head_forward<T>(cur.model, feats, rows.size());
        const auto out = loss::compute_loss<T>(cfg.loss, logits, y);
        value = out.value;
        if (std::isfinite(value)) grads = nn::head_backward<T>(cur.model, feats, rows.size(), out.dlogits);
      } else {
        auto fr = nn::forward(cur.model, assemble<T>(train_set, rows, epoch), nn::Mode::train);
        const auto out = loss::compute_loss<T>(cfg.loss, fr.logits, y);
        value = out.value;
        if (std::isfinite(value)) grads = nn::backward<T>(cur.model, fr.cache, out.dlogits);
      }
      if (!std::isfinite(value))
        throw TrainingDiverged<T>("diverged: non-finite loss at epoch " + std::to_string(epoch),
                                  last_good);
      try {
        adamw_step(cur.model.params, grads, cur.optimizer, lr, mask);
      } catch (const DivergenceError& e) {
        throw TrainingDiverged<T>(e.what(), last_good);
      }
      total += cfg.loss.reduction == loss::Reduction::mean ? value * static_cast<double>(rows.size())
                                                            : value;
    }

    HistoryRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = epoch_average(total, train_set.n, cfg.loss.reduction);
    row.valid_loss = std::numeric_limits<double>::quiet_NaN();
    row.valid_auroc = std::numeric_limits<double>::quiet_NaN();
    if (valid_set.n > 0) {
      std::vector<double> probs;
      probs.reserve(valid_set.n * L);
      double vtotal = 0;
      std::vector<std::size_t> rows;
      for (std::size_t s = 0; s < valid_set.n; s += cfg.batch_size) {
        rows.clear();
        for (std::size_t i = s; i < std::min(valid_set.n, s + cfg.batch_size); ++i) rows.push_back(i);
        const auto y = gather_labels(valid_set, rows);
        std::vector<T> logits;
        if (probe) {
          logits = nn::head_forward<T>(cur.model, gather_rows(valid_feats, F, rows), rows.size());
        } else {
          logits = nn::forward_eval(cur.model, assemble<T>(valid_set, rows, kEvalKey)).logits;
        }
        const auto out = loss::compute_loss<T>(cfg.loss, logits, y);
        vtotal += cfg.loss.reduction == loss::Reduction::mean
                      ? out.value * static_cast<double>(rows.size())
                      : out.value;
        for (T z : logits) probs.push_back(loss::sigmoid(static_cast<double>(z)));
      }
      row.valid_loss = epoch_average(vtotal, valid_set.n, cfg.loss.reduction);
      if (auto a = metrics::macro_auroc(probs, valid_set.y, L)) row.valid_auroc = *a;
    }

    cur.history.push_back(row);
    auroc_history.push_back(row.valid_auroc);
    cur.epoch = epoch + 1;
    cur.rng_state = save_rng(rng);
    if (std::isfinite(row.valid_auroc) && row.valid_auroc > cur.best_auroc) {
      cur.best_auroc = row.valid_auroc;
      cur.best_epoch = epoch;
      res.best = cur;
      have_best = true;
    }
    last_good = std::make_shared<const Checkpoint<T>>(cur);
    if (on_epoch) on_epoch(row);
    if (valid_set.n > 0) stopped = stopper.update(row.valid_loss);
  }

  res.best_updated = have_best;
  if (!have_best) res.best = cur;
  res.history = cur.history;
  res.last = std::move(cur);
  return res;
}

template <typename T>
TrainResult<T> finetune(const Checkpoint<T>& pretrained, int n_classes, const TrainConfig& cfg,
                        const Dataset& train_set, const Dataset& valid_set,
                        const EpochCallback& on_epoch) {
  if (n_classes < 1) throw ConfigError("head size must be >= 1");
  TrainConfig c = cfg;
  if (c.finetune_mode == FinetuneMode::none) c.finetune_mode = FinetuneMode::full;
  nn::Model<T> model = pretrained.model;
  nn::reset_head(model, n_classes, derive_seed(c.seed, {0x4ead}));
  auto start = initial_checkpoint(std::move(model), c);
  start.extra = {{"pretrained_epoch", pretrained.epoch},
                 {"pretrained_best_auroc", pretrained.best_auroc},
                 {"initial_params_checksum", start.model.params.checksum()}};
  return train(std::move(start), train_set, valid_set, on_epoch);
}

#define ECGF_INSTANTIATE_TRAINER(T)                                                            \
  template std::vector<T> extract_features<T>(const nn::Model<T>&, const Dataset&, std::size_t); \
  template std::vector<double> predict<T>(const nn::Model<T>&, const Dataset&, std::size_t);    \
  template Checkpoint<T> initial_checkpoint<T>(nn::Model<T>, const TrainConfig&);             \
  template TrainResult<T> train<T>(Checkpoint<T>, const Dataset&, const Dataset&,             \
                                   const EpochCallback&);                                     \
  template TrainResult<T> finetune<T>(const Checkpoint<T>&, int, const TrainConfig&,          \
                                      const Dataset&, const Dataset&, const EpochCallback&);

ECGF_INSTANTIATE_TRAINER(float)
ECGF_INSTANTIATE_TRAINER(double)

#undef ECGF_INSTANTIATE_TRAINER

}  // namespace ecgf::train

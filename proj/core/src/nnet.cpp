#include "ecgf/nnet.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include <nlohmann/json.hpp>

#include "ecgf/error.hpp"
#include "ecgf/rng.hpp"

namespace ecgf::nn {

// ---------------------------------------------------------------------------
// ParamStore

template <typename T>
std::vector<T>& ParamStore<T>::add(std::string name, std::size_t size, T fill) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter " + name);
  index_.emplace(name, arrays_.size());
  names_.push_back(std::move(name));
  arrays_.emplace_back(size, fill);
  return arrays_.back();
}

template <typename T>
std::size_t ParamStore<T>::index_of(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no array named " + std::string(name));
  return it->second;
}

template <typename T>
std::vector<T>& ParamStore<T>::operator[](std::string_view name) {
  return arrays_[index_of(name)];
}

template <typename T>
const std::vector<T>& ParamStore<T>::operator[](std::string_view name) const {
  return arrays_[index_of(name)];
}

template <typename T>
std::size_t ParamStore<T>::total() const noexcept {
  std::size_t n = 0;
  for (const auto& a : arrays_) n += a.size();
  return n;
}

template <typename T>
ParamStore<T> ParamStore<T>::zeros_like() const {
  ParamStore out;
  for (std::size_t i = 0; i < arrays_.size(); ++i) out.add(names_[i], arrays_[i].size());
  return out;
}

template <typename T>
void ParamStore<T>::fill(T value) {
  for (auto& a : arrays_) std::fill(a.begin(), a.end(), value);
}

template <typename T>
bool ParamStore<T>::all_finite() const {
  for (const auto& a : arrays_)
    for (T v : a)
      if (!std::isfinite(v)) return false;
  return true;
}

namespace {

std::uint64_t fnv_bytes(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

template <typename T>
std::uint64_t ParamStore<T>::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < arrays_.size(); ++i) {
    h = fnv_bytes(h, names_[i].data(), names_[i].size());
    h = fnv_bytes(h, arrays_[i].data(), arrays_[i].size() * sizeof(T));
  }
  return h;
}

template <typename T>
std::uint64_t ParamStore<T>::checksum(std::string_view name) const {
  const auto& a = (*this)[name];
  return fnv_bytes(0xcbf29ce484222325ULL, a.data(), a.size() * sizeof(T));
}

template class ParamStore<float>;
template class ParamStore<double>;

// ---------------------------------------------------------------------------
// ModelConfig

namespace {

bool odd_positive(int k) { return k > 0 && k % 2 == 1; }

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

void ModelConfig::validate() const {
  if (in_channels < 1) throw ConfigError("in_channels must be positive");
  if (n_classes < 1) throw ConfigError("n_classes must be positive");
  if (stem.out_channels < 1) throw ConfigError("stem width must be positive");
  if (!odd_positive(stem.kernel)) throw ConfigError("stem kernel must be odd");
  if (stem.stride != 1 && stem.stride != 2) throw ConfigError("strides must be 1 or 2");
  if (group_width < 1) throw ConfigError("group_width must be positive");
  if (!(se_ratio > 0 && se_ratio <= 1)) throw ConfigError("se_ratio must lie in (0, 1]");
  if (stages.empty()) throw ConfigError("at least one stage is required");
  for (const auto& s : stages) {
    if (s.depth < 1) throw ConfigError("stage depth must be >= 1");
    if (s.width < group_width || s.width % group_width != 0)
      throw ConfigError("stage width must be a multiple of group_width");
    if (!odd_positive(s.kernel)) throw ConfigError("stage kernel must be odd");
    if (s.stride != 1 && s.stride != 2) throw ConfigError("strides must be 1 or 2");
  }
}

std::size_t ModelConfig::total_stride() const {
  std::size_t s = static_cast<std::size_t>(stem.stride);
  for (const auto& st : stages) s *= static_cast<std::size_t>(st.stride);
  return s;
}

std::size_t ModelConfig::feature_length(std::size_t length) const {
  std::size_t l = ceil_div(length, static_cast<std::size_t>(stem.stride));
  for (const auto& st : stages) l = ceil_div(l, static_cast<std::size_t>(st.stride));
  return l;
}

int ModelConfig::feature_width() const { return stages.back().width; }

int ModelConfig::se_channels(int width) const {
  return std::max(1, static_cast<int>(std::lround(se_ratio * width)));
}

ModelConfig ModelConfig::desk(int in_channels, int n_classes) {
  ModelConfig c;
  c.in_channels = in_channels;
  c.n_classes = n_classes;
  c.stem = {32, 15, 2};
  c.stages = {{2, 32, 2, 3}, {2, 64, 2, 3}, {3, 128, 2, 3}, {4, 256, 2, 3}};
  c.group_width = 16;
  return c;
}

ModelConfig ModelConfig::micro(int in_channels, int n_classes) {
  ModelConfig c;
  c.in_channels = in_channels;
  c.n_classes = n_classes;
  c.stem = {16, 7, 2};
  c.stages = {{1, 16, 2, 5}, {1, 32, 2, 5}, {1, 64, 2, 5}};
  c.group_width = 8;
  return c;
}

ModelConfig ModelConfig::scaled(std::string_view name, int in_channels, int n_classes) {
  ModelConfig c;
  c.in_channels = in_channels;
  c.n_classes = n_classes;
  c.stem = {64, 15, 2};
  c.group_width = 32;
  if (name == "11.7M") {
    c.stages = {{2, 128, 2, 3}, {3, 256, 2, 3}, {5, 512, 2, 3}, {2, 1024, 2, 3}};
  } else if (name == "25.6M") {
    c.stages = {{2, 128, 2, 3}, {4, 256, 2, 3}, {8, 640, 2, 3}, {3, 1280, 2, 3}};
  } else if (name == "76.3M") {
    c.stages = {{2, 256, 2, 3}, {4, 512, 2, 3}, {8, 1024, 2, 3}, {5, 2048, 2, 3}};
    c.group_width = 64;
  } else {
    throw ConfigError("unknown scale preset " + std::string(name));
  }
  return c;
}

ModelConfig ModelConfig::preset(std::string_view name, int in_channels, int n_classes) {
  if (name == "desk") return desk(in_channels, n_classes);
  if (name == "micro") return micro(in_channels, n_classes);
  return scaled(name, in_channels, n_classes);
}

void to_json(nlohmann::json& j, const StageSpec& s) {
  j = {{"depth", s.depth}, {"width", s.width}, {"stride", s.stride}, {"kernel", s.kernel}};
}

void from_json(const nlohmann::json& j, StageSpec& s) {
  StageSpec d;
  s.depth = j.value("depth", d.depth);
  s.width = j.value("width", d.width);
  s.stride = j.value("stride", d.stride);
  s.kernel = j.value("kernel", d.kernel);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"in_channels", c.in_channels},
       {"n_classes", c.n_classes},
       {"stem", {{"out_channels", c.stem.out_channels},
                 {"kernel", c.stem.kernel},
                 {"stride", c.stem.stride}}},
       {"stages", c.stages},
       {"se_ratio", c.se_ratio},
       {"group_width", c.group_width},
       {"temperature_enabled", c.temperature_enabled}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const int in = j.value("in_channels", 12);
  const int classes = j.value("n_classes", 8);
  if (j.contains("preset")) {
    c = ModelConfig::preset(j.at("preset").get<std::string>(), in, classes);
  } else {
    c = ModelConfig::desk(in, classes);
  }
  if (j.contains("stem")) {
    const auto& s = j.at("stem");
    c.stem.out_channels = s.value("out_channels", c.stem.out_channels);
    c.stem.kernel = s.value("kernel", c.stem.kernel);
    c.stem.stride = s.value("stride", c.stem.stride);
  }
  if (j.contains("stages")) c.stages = j.at("stages").get<std::vector<StageSpec>>();
  c.se_ratio = j.value("se_ratio", c.se_ratio);
  c.group_width = j.value("group_width", c.group_width);
  c.temperature_enabled = j.value("temperature_enabled", c.temperature_enabled);
}

std::size_t conv_param_count(std::size_t in_channels, std::size_t out_channels,
                             std::size_t kernel, std::size_t groups, bool bias) {
  return out_channels * (in_channels / groups) * kernel + (bias ? out_channels : 0);
}

std::size_t count_params(const ModelConfig& config) {
  config.validate();
  const auto bn = [](std::size_t c) { return 2 * c; };
  std::size_t total = conv_param_count(config.in_channels, config.stem.out_channels,
                                       config.stem.kernel, 1, false) +
                      bn(config.stem.out_channels);
  std::size_t in_w = config.stem.out_channels;
  for (const auto& st : config.stages) {
    const std::size_t w = st.width;
    const std::size_t groups = w / config.group_width;
    const std::size_t se = config.se_channels(st.width);
    for (int b = 0; b < st.depth; ++b) {
      const std::size_t stride = b == 0 ? st.stride : 1;
      total += conv_param_count(in_w, w, 1, 1, false) + bn(w);
      total += conv_param_count(w, w, st.kernel, groups, false) + bn(w);
      total += (w * se + se) + (se * w + w);
      total += conv_param_count(w, w, 1, 1, false) + bn(w);
      if (in_w != w || stride != 1) total += conv_param_count(in_w, w, 1, 1, false) + bn(w);
      in_w = w;
    }
  }
  total += in_w * config.n_classes + config.n_classes;
  if (config.temperature_enabled) total += 1;
  return total;
}

// ---------------------------------------------------------------------------
// Model construction

namespace {

template <typename T>
void init_normal(std::vector<T>& a, double stddev, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : a) v = static_cast<T>(dist(rng));
}

template <typename T>
void init_uniform(std::vector<T>& a, double bound, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& v : a) v = static_cast<T>((2 * uniform01(rng) - 1) * bound);
}

template <typename T>
struct ModelBuilder {
  Model<T>& m;
  std::uint64_t seed;

  std::uint64_t next_seed() { return derive_seed(seed, {m.params.count()}); }

  void conv(const std::string& prefix, std::size_t in, std::size_t out, std::size_t k,
            std::size_t groups) {
    const std::uint64_t s = next_seed();
    auto& w = m.params.add(prefix + ".weight", out * (in / groups) * k);
    init_normal(w, std::sqrt(2.0 / static_cast<double>((in / groups) * k)), s);
  }
  void bn(const std::string& prefix, std::size_t c) {
    m.params.add(prefix + ".weight", c, T{1});
    m.params.add(prefix + ".bias", c, T{0});
    m.buffers.add(prefix + ".running_mean", c, T{0});
    m.buffers.add(prefix + ".running_var", c, T{1});
  }
  void dense(const std::string& prefix, std::size_t in, std::size_t out) {
    const std::uint64_t s = next_seed();
    auto& w = m.params.add(prefix + ".weight", out * in);
    init_uniform(w, 1.0 / std::sqrt(static_cast<double>(in)), s);
    m.params.add(prefix + ".bias", out, T{0});
  }
};

std::string block_prefix(std::size_t stage, int block) {
  return "s" + std::to_string(stage + 1) + ".b" + std::to_string(block + 1);
}

}  // namespace

template <typename T>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model<T> m;
  m.config = config;
  ModelBuilder<T> b{m, seed};
  b.conv("stem.conv", config.in_channels, config.stem.out_channels, config.stem.kernel, 1);
  b.bn("stem.bn", config.stem.out_channels);
  std::size_t in_w = config.stem.out_channels;
  for (std::size_t si = 0; si < config.stages.size(); ++si) {
    const auto& st = config.stages[si];
    const std::size_t w = st.width;
    const std::size_t se = config.se_channels(st.width);
    for (int bi = 0; bi < st.depth; ++bi) {
      const std::string p = block_prefix(si, bi);
      const std::size_t stride = bi == 0 ? st.stride : 1;
      b.conv(p + ".a.conv", in_w, w, 1, 1);
      b.bn(p + ".a.bn", w);
      b.conv(p + ".b.conv", w, w, st.kernel, w / config.group_width);
      b.bn(p + ".b.bn", w);
      b.dense(p + ".se.reduce", w, se);
      b.dense(p + ".se.expand", se, w);
      b.conv(p + ".c.conv", w, w, 1, 1);
      b.bn(p + ".c.bn", w);
      if (in_w != w || stride != 1) {
        b.conv(p + ".proj.conv", in_w, w, 1, 1);
        b.bn(p + ".proj.bn", w);
      }
      in_w = w;
    }
  }
  b.dense("head", in_w, config.n_classes);
  if (config.temperature_enabled) m.params.add("tau", 1, T{0});
  return m;
}

std::vector<std::string> head_param_names(const ModelConfig& config) {
  std::vector<std::string> names{"head.weight", "head.bias"};
  if (config.temperature_enabled) names.emplace_back("tau");
  return names;
}

template <typename T>
void reset_head(Model<T>& model, int n_classes, std::uint64_t seed) {
  if (n_classes < 1) throw ConfigError("head size must be >= 1");
  ModelConfig cfg = model.config;
  cfg.n_classes = n_classes;
  // Rebuild the store so the head keeps its position in the name order.
  ParamStore<T> params;
  for (std::size_t i = 0; i < model.params.count(); ++i) {
    const auto& name = model.params.name(i);
    if (name == "head.weight") {
      auto& w = params.add(name, static_cast<std::size_t>(n_classes) * cfg.feature_width());
      init_uniform(w, 1.0 / std::sqrt(static_cast<double>(cfg.feature_width())),
                   derive_seed(seed, {0x4ead}));
    } else if (name == "head.bias") {
      params.add(name, static_cast<std::size_t>(n_classes), T{0});
    } else if (name == "tau") {
      params.add(name, 1, T{0});
    } else {
      params.add(name, 0) = model.params.at(i);
    }
  }
  model.params = std::move(params);
  model.config = cfg;
}

// ---------------------------------------------------------------------------
// Forward / backward on a recorded tape

namespace {

template <typename T>
class Recorder {
 public:
  Recorder(const ParamStore<T>& params, ParamStore<T>& buffers, Cache<T>& cache, bool training)
      : params_(params), buffers_(buffers), cache_(cache), training_(training) {}

  int input(Tensor3<T> x) {
    cache_.values.push_back(std::move(x));
    return static_cast<int>(cache_.values.size()) - 1;
  }

  int conv(int x, const std::string& name, const ConvShape& shape) {
    TapeNode node;
    node.kind = OpKind::conv;
    node.in0 = x;
    node.params = {param_index(name + ".weight")};
    node.conv = shape;
    Tensor3<T> y;
    conv1d_forward<T>(value(x), params_.at(node.params[0]), {}, shape, y);
    return push(std::move(node), std::move(y));
  }

  int bn(int x, const std::string& name) {
    TapeNode node;
    node.kind = OpKind::batchnorm;
    node.in0 = x;
    node.params = {param_index(name + ".weight"), param_index(name + ".bias")};
    node.buffers = {buffer_index(name + ".running_mean"), buffer_index(name + ".running_var")};
    node.training = training_;
    Tensor3<T> y;
    std::vector<T> mean, invstd;
    batchnorm_forward<T>(value(x), params_.at(node.params[0]), params_.at(node.params[1]),
                         buffers_.at(node.buffers[0]), buffers_.at(node.buffers[1]), training_, y,
                         mean, invstd);
    cache_.saved_stats.emplace_back(std::move(mean), std::move(invstd));
    node.saved = static_cast<int>(cache_.saved_stats.size()) - 1;
    return push(std::move(node), std::move(y));
  }

  int relu(int x) {
    TapeNode node;
    node.kind = OpKind::relu;
    node.in0 = x;
    Tensor3<T> y;
    relu_forward(value(x), y);
    return push(std::move(node), std::move(y));
  }

  int avgpool(int x) {
    TapeNode node;
    node.kind = OpKind::avgpool;
    node.in0 = x;
    node.width = value(x).l;
    Tensor3<T> y;
    avgpool_forward(value(x), y);
    return push(std::move(node), std::move(y));
  }

  int dense(int x, const std::string& name, std::size_t out) {
    TapeNode node;
    node.kind = OpKind::dense;
    node.in0 = x;
    node.params = {param_index(name + ".weight"), param_index(name + ".bias")};
    node.width = out;
    Tensor3<T> y;
    dense_forward<T>(value(x), params_.at(node.params[0]), params_.at(node.params[1]), out, y);
    return push(std::move(node), std::move(y));
  }

  int sigmoid(int x) {
    TapeNode node;
    node.kind = OpKind::sigmoid;
    node.in0 = x;
    Tensor3<T> y;
    sigmoid_forward(value(x), y);
    return push(std::move(node), std::move(y));
  }

  int channel_scale(int x, int gate) {
    TapeNode node;
    node.kind = OpKind::channel_scale;
    node.in0 = x;
    node.in1 = gate;
    Tensor3<T> y;
    channel_scale_forward(value(x), value(gate), y);
    return push(std::move(node), std::move(y));
  }

  int add(int a, int b) {
    TapeNode node;
    node.kind = OpKind::add;
    node.in0 = a;
    node.in1 = b;
    Tensor3<T> y = value(a);
    const auto& vb = value(b);
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += vb.data[i];
    return push(std::move(node), std::move(y));
  }

  int temperature(int x) {
    TapeNode node;
    node.kind = OpKind::temperature;
    node.in0 = x;
    node.params = {param_index("tau")};
    Tensor3<T> y = value(x);
    const T scale = std::exp(params_.at(node.params[0])[0]);
    for (auto& v : y.data) v *= scale;
    return push(std::move(node), std::move(y));
  }

  const Tensor3<T>& value(int i) const { return cache_.values[static_cast<std::size_t>(i)]; }

 private:
  std::size_t param_index(const std::string& name) const { return params_.index_of(name); }
  std::size_t buffer_index(const std::string& name) const { return buffers_.index_of(name); }

  int push(TapeNode node, Tensor3<T> y) {
    cache_.values.push_back(std::move(y));
    const int out = static_cast<int>(cache_.values.size()) - 1;
    node.out = out;
    cache_.tape.push_back(std::move(node));
    return out;
  }

  const ParamStore<T>& params_;
  ParamStore<T>& buffers_;
  Cache<T>& cache_;
  bool training_;
};

template <typename T>
ForwardResult<T> run_forward(const ModelConfig& cfg, const ParamStore<T>& params,
                             ParamStore<T>& buffers, const Tensor3<T>& batch, Mode mode) {
  cfg.validate();
  if (batch.c != static_cast<std::size_t>(cfg.in_channels))
    throw ConfigError("input has " + std::to_string(batch.c) + " channels, model expects " +
                      std::to_string(cfg.in_channels));
  if (batch.n == 0 || batch.l == 0) throw ConfigError("empty input batch");

  ForwardResult<T> result;
  Cache<T>& cache = result.cache;
  cache.config = cfg;
  cache.batch = batch.n;
  cache.params_checksum = params.checksum();
  Recorder<T> rec(params, buffers, cache, mode == Mode::train);

  int x = rec.input(batch);
  const std::size_t gw = static_cast<std::size_t>(cfg.group_width);
  x = rec.conv(x, "stem.conv",
               {static_cast<std::size_t>(cfg.in_channels),
                static_cast<std::size_t>(cfg.stem.out_channels),
                static_cast<std::size_t>(cfg.stem.kernel),
                static_cast<std::size_t>(cfg.stem.stride), 1});
  x = rec.relu(rec.bn(x, "stem.bn"));

  std::size_t in_w = static_cast<std::size_t>(cfg.stem.out_channels);
  for (std::size_t si = 0; si < cfg.stages.size(); ++si) {
    const auto& st = cfg.stages[si];
    const std::size_t w = static_cast<std::size_t>(st.width);
    const std::size_t k = static_cast<std::size_t>(st.kernel);
    for (int bi = 0; bi < st.depth; ++bi) {
      const std::string p = block_prefix(si, bi);
      const std::size_t stride = bi == 0 ? static_cast<std::size_t>(st.stride) : 1;
      int a = rec.relu(rec.bn(rec.conv(x, p + ".a.conv", {in_w, w, 1, 1, 1}), p + ".a.bn"));
      int b = rec.relu(rec.bn(rec.conv(a, p + ".b.conv", {w, w, k, stride, w / gw}), p + ".b.bn"));
      int pooled = rec.avgpool(b);
      int hidden = rec.relu(rec.dense(pooled, p + ".se.reduce",
                                      static_cast<std::size_t>(cfg.se_channels(st.width))));
      int gate = rec.sigmoid(rec.dense(hidden, p + ".se.expand", w));
      int scaled = rec.channel_scale(b, gate);
      int c = rec.bn(rec.conv(scaled, p + ".c.conv", {w, w, 1, 1, 1}), p + ".c.bn");
      int shortcut = x;
      if (in_w != w || stride != 1)
        shortcut = rec.bn(rec.conv(x, p + ".proj.conv", {in_w, w, 1, stride, 1}), p + ".proj.bn");
      x = rec.relu(rec.add(c, shortcut));
      in_w = w;
    }
  }
  const int features = rec.avgpool(x);
  int logits = rec.dense(features, "head", static_cast<std::size_t>(cfg.n_classes));
  if (cfg.temperature_enabled) logits = rec.temperature(logits);
  cache.features = features;
  cache.logits = logits;
  result.logits = rec.value(logits).data;
  result.features = rec.value(features).data;
  return result;
}

template <typename T>
void accumulate(std::vector<Tensor3<T>>& grads, int idx, Tensor3<T>&& g) {
  auto& slot = grads[static_cast<std::size_t>(idx)];
  if (slot.data.empty()) {
    slot = std::move(g);
  } else {
    for (std::size_t i = 0; i < slot.size(); ++i) slot.data[i] += g.data[i];
  }
}

}  // namespace

template <typename T>
ForwardResult<T> forward(Model<T>& model, const Tensor3<T>& batch, Mode mode) {
  return run_forward(model.config, model.params, model.buffers, batch, mode);
}

template <typename T>
ForwardResult<T> forward_eval(const Model<T>& model, const Tensor3<T>& batch) {
  ParamStore<T> buffers = model.buffers;
  return run_forward(model.config, model.params, buffers, batch, Mode::eval);
}

template <typename T>
ParamStore<T> backward(const Model<T>& model, const Cache<T>& cache,
                       std::span<const std::type_identity_t<T>> dlogits) {
  if (cache.tape.empty() || cache.logits < 0) throw ConfigError("empty forward cache");
  if (!(cache.config == model.config) || cache.params_checksum != model.params.checksum())
    throw ConfigError("stale forward cache: parameters changed since forward");
  const auto& out = cache.values[static_cast<std::size_t>(cache.logits)];
  if (dlogits.size() != out.size()) throw ConfigError("logit gradient has the wrong size");

  ParamStore<T> grads = model.params.zeros_like();
  std::vector<Tensor3<T>> g(cache.values.size());
  g[static_cast<std::size_t>(cache.logits)] = Tensor3<T>(out.n, out.c, out.l);
  std::copy(dlogits.begin(), dlogits.end(), g[static_cast<std::size_t>(cache.logits)].data.begin());

  for (auto it = cache.tape.rbegin(); it != cache.tape.rend(); ++it) {
    const TapeNode& node = *it;
    Tensor3<T> gy = std::move(g[static_cast<std::size_t>(node.out)]);
    g[static_cast<std::size_t>(node.out)] = Tensor3<T>();
    if (gy.data.empty()) continue;
    const auto& x = cache.values[static_cast<std::size_t>(node.in0)];
    const bool need_dx = node.in0 != 0;  // value 0 is the input batch
    switch (node.kind) {
      case OpKind::conv: {
        Tensor3<T> dx;
        conv1d_backward<T>(x, model.params.at(node.params[0]), node.conv, gy,
                           need_dx ? &dx : nullptr, grads.at(node.params[0]), {});
        if (need_dx) accumulate(g, node.in0, std::move(dx));
        break;
      }
      case OpKind::batchnorm: {
        Tensor3<T> dx;
        const auto& [mean, invstd] = cache.saved_stats[static_cast<std::size_t>(node.saved)];
        batchnorm_backward<T>(x, model.params.at(node.params[0]), node.training, mean, invstd, gy,
                              dx, grads.at(node.params[0]), grads.at(node.params[1]));
        accumulate(g, node.in0, std::move(dx));
        break;
      }
      case OpKind::relu: {
        Tensor3<T> dx;
        relu_backward(cache.values[static_cast<std::size_t>(node.out)], gy, dx);
        accumulate(g, node.in0, std::move(dx));
        break;
      }
      case OpKind::avgpool: {
        Tensor3<T> dx;
        avgpool_backward(node.width, gy, dx);
        accumulate(g, node.in0, std::move(dx));
        break;
      }
      case OpKind::dense: {
        Tensor3<T> dx;
        dense_backward<T>(x, model.params.at(node.params[0]), node.width, gy, &dx,
                          grads.at(node.params[0]), grads.at(node.params[1]));
        accumulate(g, node.in0, std::move(dx));
        break;
      }
      case OpKind::sigmoid: {
        Tensor3<T> dx;
        sigmoid_backward(cache.values[static_cast<std::size_t>(node.out)], gy, dx);
        accumulate(g, node.in0, std::move(dx));
        break;
      }
      case OpKind::channel_scale: {
        Tensor3<T> dx, dgate;
        channel_scale_backward(x, cache.values[static_cast<std::size_t>(node.in1)], gy, dx, dgate);
        accumulate(g, node.in0, std::move(dx));
        accumulate(g, node.in1, std::move(dgate));
        break;
      }
      case OpKind::add: {
        Tensor3<T> copy = gy;
        accumulate(g, node.in0, std::move(copy));
        accumulate(g, node.in1, std::move(gy));
        break;
      }
      case OpKind::temperature: {
        const auto& y = cache.values[static_cast<std::size_t>(node.out)];
        const T scale = std::exp(model.params.at(node.params[0])[0]);
        double dtau = 0;
        for (std::size_t i = 0; i < gy.size(); ++i)
          dtau += static_cast<double>(gy.data[i]) * static_cast<double>(y.data[i]);
        grads.at(node.params[0])[0] += static_cast<T>(dtau);
        for (auto& v : gy.data) v *= scale;
        accumulate(g, node.in0, std::move(gy));
        break;
      }
    }
  }
  return grads;
}

template <typename T>
std::vector<T> head_forward(const Model<T>& model, std::span<const std::type_identity_t<T>> features,
                            std::size_t batch) {
  const std::size_t f = static_cast<std::size_t>(model.config.feature_width());
  if (features.size() != batch * f) throw ConfigError("feature matrix has the wrong size");
  Tensor3<T> x(batch, f, 1), y;
  std::copy(features.begin(), features.end(), x.data.begin());
  dense_forward<T>(x, model.params["head.weight"], model.params["head.bias"],
                   static_cast<std::size_t>(model.config.n_classes), y);
  if (model.config.temperature_enabled) {
    const T scale = std::exp(model.params["tau"][0]);
    for (auto& v : y.data) v *= scale;
  }
  return y.data;
}

template <typename T>
ParamStore<T> head_backward(const Model<T>& model,
                            std::span<const std::type_identity_t<T>> features, std::size_t batch,
                            std::span<const std::type_identity_t<T>> dlogits) {
  const std::size_t f = static_cast<std::size_t>(model.config.feature_width());
  const std::size_t k = static_cast<std::size_t>(model.config.n_classes);
  if (features.size() != batch * f || dlogits.size() != batch * k)
    throw ConfigError("head gradient inputs have the wrong size");
  ParamStore<T> grads = model.params.zeros_like();
  Tensor3<T> x(batch, f, 1), gy(batch, k, 1);
  std::copy(features.begin(), features.end(), x.data.begin());
  std::copy(dlogits.begin(), dlogits.end(), gy.data.begin());
  if (model.config.temperature_enabled) {
    const T scale = std::exp(model.params["tau"][0]);
    const auto logits = head_forward<T>(model, features, batch);
    double dtau = 0;
    for (std::size_t i = 0; i < gy.size(); ++i)
      dtau += static_cast<double>(gy.data[i]) * static_cast<double>(logits[i]);
    grads["tau"][0] = static_cast<T>(dtau);
    for (auto& v : gy.data) v *= scale;
  }
  dense_backward<T>(x, model.params["head.weight"], k, gy, nullptr, grads["head.weight"],
                    grads["head.bias"]);
  return grads;
}

#define ECGF_INSTANTIATE_NNET(T)                                                            \
  template Model<T> build_model<T>(const ModelConfig&, std::uint64_t);                      \
  template void reset_head<T>(Model<T>&, int, std::uint64_t);                               \
  template ForwardResult<T> forward<T>(Model<T>&, const Tensor3<T>&, Mode);                 \
  template ForwardResult<T> forward_eval<T>(const Model<T>&, const Tensor3<T>&);            \
  template ParamStore<T> backward<T>(const Model<T>&, const Cache<T>&, std::span<const T>); \
  template std::vector<T> head_forward<T>(const Model<T>&, std::span<const T>, std::size_t); \
  template ParamStore<T> head_backward<T>(const Model<T>&, std::span<const T>, std::size_t, \
                                          std::span<const T>);

ECGF_INSTANTIATE_NNET(float)
ECGF_INSTANTIATE_NNET(double)

#undef ECGF_INSTANTIATE_NNET

}  // namespace ecgf::nn

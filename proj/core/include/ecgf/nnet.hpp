#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ecgf/tensor_ops.hpp"

namespace ecgf::nn {

enum class Precision { f32, f64 };

/// Named flat arrays in insertion order.
template <typename T>
class ParamStore {
 public:
  std::vector<T>& add(std::string name, std::size_t size, T fill = T{0});

  bool contains(std::string_view name) const { return index_.contains(std::string(name)); }
  std::vector<T>& operator[](std::string_view name);
  const std::vector<T>& operator[](std::string_view name) const;
  std::vector<T>& at(std::size_t i) { return arrays_.at(i); }
  const std::vector<T>& at(std::size_t i) const { return arrays_.at(i); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  /// Position of `name`; throws ConfigError when absent.
  std::size_t index_of(std::string_view name) const;
  const std::vector<std::string>& names() const noexcept { return names_; }

  std::size_t count() const noexcept { return arrays_.size(); }
  /// Total number of elements across arrays.
  std::size_t total() const noexcept;

  /// Same names and sizes, all zeros.
  ParamStore zeros_like() const;
  void fill(T value);
  bool all_finite() const;
  /// FNV-1a over names and raw bytes.
  std::uint64_t checksum() const;
  std::uint64_t checksum(std::string_view name) const;

  bool operator==(const ParamStore&) const = default;

 private:
  std::vector<std::string> names_;
  std::vector<std::vector<T>> arrays_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct StemSpec {
  int out_channels = 32;
  int kernel = 15;
  int stride = 2;

  bool operator==(const StemSpec&) const = default;
};

struct StageSpec {
  int depth = 1;
  int width = 32;
  int stride = 2;
  int kernel = 3;

  bool operator==(const StageSpec&) const = default;
};

struct ModelConfig {
  int in_channels = 12;
  int n_classes = 8;
  StemSpec stem;
  std::vector<StageSpec> stages;
  double se_ratio = 0.25;
  int group_width = 16;
  bool temperature_enabled = true;

  void validate() const;
  std::size_t total_stride() const;
  /// Length entering the global pool for an input of `length` samples.
  std::size_t feature_length(std::size_t length) const;
  /// Channels entering the head.
  int feature_width() const;
  /// Units in a block's squeeze-excite bottleneck.
  int se_channels(int width) const;

  bool operator==(const ModelConfig&) const = default;

  /// stem (32, 15, 2); stages (2,32) (2,64) (3,128) (4,256), stride 2, kernel 3;
  /// group width 16.
  static ModelConfig desk(int in_channels, int n_classes);
  /// A few thousand parameters, for ablation sweeps on short inputs.
  static ModelConfig micro(int in_channels, int n_classes);
  /// Approximations of the larger published scale points (millions of
  /// parameters): "11.7M", "25.6M", "76.3M".
  static ModelConfig scaled(std::string_view name, int in_channels, int n_classes);
  static ModelConfig preset(std::string_view name, int in_channels, int n_classes);
};

void to_json(nlohmann::json& j, const StageSpec& s);
void from_json(const nlohmann::json& j, StageSpec& s);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Parameters of a 1D convolution.
std::size_t conv_param_count(std::size_t in_channels, std::size_t out_channels,
                             std::size_t kernel, std::size_t groups, bool bias);
/// Closed-form learnable-parameter count (running statistics excluded).
std::size_t count_params(const ModelConfig& config);

/// Parameters plus non-learnable state (normalization running statistics).
template <typename T>
struct Model {
  ModelConfig config;
  ParamStore<T> params;
  ParamStore<T> buffers;
};

/// Fan-in scaled random initialization; normalization scales 1, offsets 0,
/// temperature 0.
template <typename T>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed);

/// Names of the classification head arrays (dense weight, bias, temperature).
std::vector<std::string> head_param_names(const ModelConfig& config);

/// Replaces the dense head with a freshly initialized one of n_classes
/// outputs and resets the temperature.
template <typename T>
void reset_head(Model<T>& model, int n_classes, std::uint64_t seed);

enum class Mode { train, eval };

enum class OpKind : std::uint8_t {
  conv,
  batchnorm,
  relu,
  avgpool,
  dense,
  sigmoid,
  channel_scale,
  add,
  temperature,
};

/// One recorded operation of the forward pass.
struct TapeNode {
  OpKind kind = OpKind::conv;
  int in0 = -1;
  int in1 = -1;
  int out = -1;
  std::vector<std::size_t> params;  // indices into the ParamStore
  std::vector<std::size_t> buffers;
  ConvShape conv;
  std::size_t width = 0;
  bool training = false;
  int saved = -1;  // index of saved statistics
};

/// Intermediates retained by forward for backward.
template <typename T>
struct Cache {
  std::vector<Tensor3<T>> values;
  std::vector<TapeNode> tape;
  std::vector<std::pair<std::vector<T>, std::vector<T>>> saved_stats;
  int features = -1;
  int logits = -1;
  std::uint64_t params_checksum = 0;
  ModelConfig config;
  std::size_t batch = 0;
};

template <typename T>
struct ForwardResult {
  /// batch x n_classes, row-major.
  std::vector<T> logits;
  /// batch x feature_width pooled features.
  std::vector<T> features;
  Cache<T> cache;
};

/// Logits are head(features) * exp(tau) when the temperature is enabled.
/// Training mode uses batch statistics and updates the running ones.
template <typename T>
ForwardResult<T> forward(Model<T>& model, const Tensor3<T>& batch, Mode mode);

/// Evaluation-mode forward; leaves the model untouched.
template <typename T>
ForwardResult<T> forward_eval(const Model<T>& model, const Tensor3<T>& batch);

/// Gradient of sum(dlogits * logits) with respect to every parameter.
template <typename T>
ParamStore<T> backward(const Model<T>& model, const Cache<T>& cache,
                       std::span<const std::type_identity_t<T>> dlogits);

/// Head-only pass on precomputed pooled features (batch x feature_width).
template <typename T>
std::vector<T> head_forward(const Model<T>& model, std::span<const std::type_identity_t<T>> features,
                            std::size_t batch);

/// Gradients for head parameters only (other arrays left zero).
template <typename T>
ParamStore<T> head_backward(const Model<T>& model,
                            std::span<const std::type_identity_t<T>> features, std::size_t batch,
                            std::span<const std::type_identity_t<T>> dlogits);

}  // namespace ecgf::nn

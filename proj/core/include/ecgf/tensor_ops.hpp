#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ecgf::nn {

/// Dense (batch, channels, length) buffer, row-major.
template <typename T>
struct Tensor3 {
  std::size_t n = 0, c = 0, l = 0;
  std::vector<T> data;

  Tensor3() = default;
  Tensor3(std::size_t n_, std::size_t c_, std::size_t l_, T fill = T{0})
      : n(n_), c(c_), l(l_), data(n_ * c_ * l_, fill) {}

  std::size_t size() const noexcept { return data.size(); }
  T* sample(std::size_t i) noexcept { return data.data() + i * c * l; }
  const T* sample(std::size_t i) const noexcept { return data.data() + i * c * l; }
  T* row(std::size_t i, std::size_t ch) noexcept { return data.data() + (i * c + ch) * l; }
  const T* row(std::size_t i, std::size_t ch) const noexcept {
    return data.data() + (i * c + ch) * l;
  }
  bool same_shape(const Tensor3& o) const noexcept { return n == o.n && c == o.c && l == o.l; }
};

/// Geometry of a 1D convolution with symmetric "same" padding: output length
/// ceil(length / stride), window of output j centred on input j * stride.
struct ConvShape {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t groups = 1;

  std::size_t out_length(std::size_t length) const { return (length + stride - 1) / stride; }
  std::size_t weight_size() const { return out_channels * (in_channels / groups) * kernel; }
  void validate() const;
};

/// Cross-correlation per output channel within its group. Weight layout is
/// [out_channels][in_channels / groups][kernel]; bias may be empty.
template <typename T>
void conv1d_forward(const Tensor3<T>& x, std::span<const T> weight, std::span<const T> bias,
                    const ConvShape& shape, Tensor3<T>& y);

/// Accumulates into dweight / dbias (when non-empty) and overwrites dx
/// (when non-null).
template <typename T>
void conv1d_backward(const Tensor3<T>& x, std::span<const T> weight, const ConvShape& shape,
                     const Tensor3<T>& dy, Tensor3<T>* dx, std::span<T> dweight,
                     std::span<T> dbias);

template <typename T>
Tensor3<T> conv1d(const Tensor3<T>& x, std::span<const T> weight, std::span<const T> bias,
                  std::size_t out_channels, std::size_t kernel, std::size_t stride,
                  std::size_t groups);

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel standardization over (batch, length) followed by an affine map.
/// In training mode the batch statistics are used and saved (mean, inverse
/// std) and the running statistics are updated; otherwise the running
/// statistics are used.
template <typename T>
void batchnorm_forward(const Tensor3<T>& x, std::span<const T> gamma, std::span<const T> beta,
                       std::span<T> running_mean, std::span<T> running_var, bool training,
                       Tensor3<T>& y, std::vector<T>& saved_mean, std::vector<T>& saved_invstd);

template <typename T>
void batchnorm_backward(const Tensor3<T>& x, std::span<const T> gamma, bool training,
                        std::span<const T> saved_mean, std::span<const T> saved_invstd,
                        const Tensor3<T>& dy, Tensor3<T>& dx, std::span<T> dgamma,
                        std::span<T> dbeta);

template <typename T>
void relu_forward(const Tensor3<T>& x, Tensor3<T>& y);
/// Uses the forward output as the mask.
template <typename T>
void relu_backward(const Tensor3<T>& y, const Tensor3<T>& dy, Tensor3<T>& dx);

/// Global average over length: (n, c, l) -> (n, c, 1).
template <typename T>
void avgpool_forward(const Tensor3<T>& x, Tensor3<T>& y);
template <typename T>
void avgpool_backward(std::size_t length, const Tensor3<T>& dy, Tensor3<T>& dx);

/// Fully connected on (n, in, 1) -> (n, out, 1); weight layout [out][in].
template <typename T>
void dense_forward(const Tensor3<T>& x, std::span<const T> weight, std::span<const T> bias,
                   std::size_t out_features, Tensor3<T>& y);
template <typename T>
void dense_backward(const Tensor3<T>& x, std::span<const T> weight, std::size_t out_features,
                    const Tensor3<T>& dy, Tensor3<T>* dx, std::span<T> dweight,
                    std::span<T> dbias);

template <typename T>
void sigmoid_forward(const Tensor3<T>& x, Tensor3<T>& y);
template <typename T>
void sigmoid_backward(const Tensor3<T>& y, const Tensor3<T>& dy, Tensor3<T>& dx);

/// y[n, c, :] = x[n, c, :] * gate[n, c].
template <typename T>
void channel_scale_forward(const Tensor3<T>& x, const Tensor3<T>& gate, Tensor3<T>& y);
template <typename T>
void channel_scale_backward(const Tensor3<T>& x, const Tensor3<T>& gate, const Tensor3<T>& dy,
                            Tensor3<T>& dx, Tensor3<T>& dgate);

/// Squeeze-and-excitation weights: reduce [r][C] + [r], expand [C][r] + [C].
template <typename T>
struct SeWeights {
  std::size_t channels = 0;
  std::size_t reduced = 0;
  std::vector<T> reduce_weight, reduce_bias, expand_weight, expand_bias;
};

/// Channel attention: average over length, reduce + ReLU, expand + logistic
/// gate, then scale the input channel-wise.
template <typename T>
Tensor3<T> squeeze_excite(const Tensor3<T>& x, const SeWeights<T>& w);

}  // namespace ecgf::nn

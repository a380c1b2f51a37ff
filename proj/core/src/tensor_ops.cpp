#include "ecgf/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "ecgf/error.hpp"

namespace ecgf::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// Lays the receptive fields of one group of one sample out as columns:
// col[(ci * K + kk) * lout + j] = x[ci][j * stride + kk - pad].
template <typename T>
void im2col(const T* x, std::size_t cin_g, std::size_t length, const ConvShape& s,
            std::size_t lout, T* col) {
  const auto pad = static_cast<std::ptrdiff_t>(s.kernel / 2);
  const auto len = static_cast<std::ptrdiff_t>(length);
  const auto stride = static_cast<std::ptrdiff_t>(s.stride);
  for (std::size_t ci = 0; ci < cin_g; ++ci) {
    const T* xr = x + ci * length;
    for (std::size_t kk = 0; kk < s.kernel; ++kk) {
      T* cr = col + (ci * s.kernel + kk) * lout;
      const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kk) - pad;
      for (std::size_t j = 0; j < lout; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(j) * stride + off;
        cr[j] = (src >= 0 && src < len) ? xr[src] : T{0};
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t cin_g, std::size_t length, const ConvShape& s,
                std::size_t lout, T* dx) {
  const auto pad = static_cast<std::ptrdiff_t>(s.kernel / 2);
  const auto len = static_cast<std::ptrdiff_t>(length);
  const auto stride = static_cast<std::ptrdiff_t>(s.stride);
  for (std::size_t ci = 0; ci < cin_g; ++ci) {
    T* dr = dx + ci * length;
    for (std::size_t kk = 0; kk < s.kernel; ++kk) {
      const T* cr = col + (ci * s.kernel + kk) * lout;
      const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kk) - pad;
      for (std::size_t j = 0; j < lout; ++j) {
        const std::ptrdiff_t dst = static_cast<std::ptrdiff_t>(j) * stride + off;
        if (dst >= 0 && dst < len) dr[dst] += cr[j];
      }
    }
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw ConfigError(std::string("shape mismatch: ") + what);
}

}  // namespace

void ConvShape::validate() const {
  require(in_channels > 0 && out_channels > 0 && kernel > 0 && stride > 0 && groups > 0,
          "convolution dimensions must be positive");
  require(in_channels % groups == 0, "input channels not divisible by groups");
  require(out_channels % groups == 0, "output channels not divisible by groups");
}

template <typename T>
void conv1d_forward(const Tensor3<T>& x, std::span<const T> weight, std::span<const T> bias,
                    const ConvShape& s, Tensor3<T>& y) {
  s.validate();
  require(x.c == s.in_channels, "conv input channels");
  require(weight.size() == s.weight_size(), "conv weight size");
  require(bias.empty() || bias.size() == s.out_channels, "conv bias size");

  const std::size_t lout = s.out_length(x.l);
  const std::size_t cin_g = s.in_channels / s.groups;
  const std::size_t cout_g = s.out_channels / s.groups;
  const std::size_t ck = cin_g * s.kernel;
  y = Tensor3<T>(x.n, s.out_channels, lout);

  const bool direct = s.kernel == 1 && s.stride == 1;
  std::vector<T> col(direct ? 0 : ck * lout);
  for (std::size_t n = 0; n < x.n; ++n) {
    for (std::size_t g = 0; g < s.groups; ++g) {
      const T* xg = x.row(n, g * cin_g);
      CMapMat<T> w(weight.data() + g * cout_g * ck, static_cast<Eigen::Index>(cout_g),
                   static_cast<Eigen::Index>(ck));
      MapMat<T> out(y.row(n, g * cout_g), static_cast<Eigen::Index>(cout_g),
                    static_cast<Eigen::Index>(lout));
      if (direct) {
        out.noalias() = w * CMapMat<T>(xg, static_cast<Eigen::Index>(cin_g),
                                       static_cast<Eigen::Index>(lout));
      } else {
        im2col(xg, cin_g, x.l, s, lout, col.data());
        out.noalias() = w * CMapMat<T>(col.data(), static_cast<Eigen::Index>(ck),
                                       static_cast<Eigen::Index>(lout));
      }
    }
    if (!bias.empty())
      for (std::size_t co = 0; co < s.out_channels; ++co) {
        T* r = y.row(n, co);
        for (std::size_t j = 0; j < lout; ++j) r[j] += bias[co];
      }
  }
}

template <typename T>
void conv1d_backward(const Tensor3<T>& x, std::span<const T> weight, const ConvShape& s,
                     const Tensor3<T>& dy, Tensor3<T>* dx, std::span<T> dweight,
                     std::span<T> dbias) {
  const std::size_t lout = s.out_length(x.l);
  require(dy.n == x.n && dy.c == s.out_channels && dy.l == lout, "conv output gradient");
  require(dweight.empty() || dweight.size() == s.weight_size(), "conv weight gradient");
  const std::size_t cin_g = s.in_channels / s.groups;
  const std::size_t cout_g = s.out_channels / s.groups;
  const std::size_t ck = cin_g * s.kernel;
  const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };

  if (dx) *dx = Tensor3<T>(x.n, x.c, x.l);
  const bool direct = s.kernel == 1 && s.stride == 1;
  std::vector<T> col(direct ? 0 : ck * lout);
  std::vector<T> dcol(direct ? 0 : ck * lout);
  for (std::size_t n = 0; n < x.n; ++n) {
    for (std::size_t g = 0; g < s.groups; ++g) {
      const T* xg = x.row(n, g * cin_g);
      CMapMat<T> w(weight.data() + g * cout_g * ck, ei(cout_g), ei(ck));
      CMapMat<T> gy(dy.row(n, g * cout_g), ei(cout_g), ei(lout));
      if (direct) {
        CMapMat<T> xin(xg, ei(cin_g), ei(lout));
        if (!dweight.empty()) {
          MapMat<T> dw(dweight.data() + g * cout_g * ck, ei(cout_g), ei(ck));
          dw.noalias() += gy * xin.transpose();
        }
        if (dx) {
          MapMat<T> gx(dx->row(n, g * cin_g), ei(cin_g), ei(lout));
          gx.noalias() = w.transpose() * gy;
        }
      } else {
        if (!dweight.empty()) {
          im2col(xg, cin_g, x.l, s, lout, col.data());
          MapMat<T> dw(dweight.data() + g * cout_g * ck, ei(cout_g), ei(ck));
          dw.noalias() += gy * CMapMat<T>(col.data(), ei(ck), ei(lout)).transpose();
        }
        if (dx) {
          MapMat<T>(dcol.data(), ei(ck), ei(lout)).noalias() = w.transpose() * gy;
          col2im_add(dcol.data(), cin_g, x.l, s, lout, dx->row(n, g * cin_g));
        }
      }
    }
    if (!dbias.empty())
      for (std::size_t co = 0; co < s.out_channels; ++co) {
        const T* r = dy.row(n, co);
        T acc{0};
        for (std::size_t j = 0; j < lout; ++j) acc += r[j];
        dbias[co] += acc;
      }
  }
}

template <typename T>
Tensor3<T> conv1d(const Tensor3<T>& x, std::span<const T> weight, std::span<const T> bias,
                  std::size_t out_channels, std::size_t kernel, std::size_t stride,
                  std::size_t groups) {
  ConvShape s{x.c, out_channels, kernel, stride, groups};
  Tensor3<T> y;
  conv1d_forward(x, weight, bias, s, y);
  return y;
}

template <typename T>
void batchnorm_forward(const Tensor3<T>& x, std::span<const T> gamma, std::span<const T> beta,
                       std::span<T> running_mean, std::span<T> running_var, bool training,
                       Tensor3<T>& y, std::vector<T>& saved_mean, std::vector<T>& saved_invstd) {
  require(gamma.size() == x.c && beta.size() == x.c, "batchnorm affine size");
  require(running_mean.size() == x.c && running_var.size() == x.c, "batchnorm statistics size");
  const std::size_t count = x.n * x.l;
  require(!training || count > 1, "batchnorm needs more than one value per channel");
  y = Tensor3<T>(x.n, x.c, x.l);
  saved_mean.assign(x.c, T{0});
  saved_invstd.assign(x.c, T{0});
  for (std::size_t c = 0; c < x.c; ++c) {
    double mean, var;
    if (training) {
      double s = 0;
      for (std::size_t n = 0; n < x.n; ++n) {
        const T* r = x.row(n, c);
        for (std::size_t j = 0; j < x.l; ++j) s += static_cast<double>(r[j]);
      }
      mean = s / static_cast<double>(count);
      double ss = 0;
      for (std::size_t n = 0; n < x.n; ++n) {
        const T* r = x.row(n, c);
        for (std::size_t j = 0; j < x.l; ++j) {
          const double d = static_cast<double>(r[j]) - mean;
          ss += d * d;
        }
      }
      var = ss / static_cast<double>(count);
      const double m = kBatchNormMomentum;
      running_mean[c] = static_cast<T>((1 - m) * static_cast<double>(running_mean[c]) + m * mean);
      running_var[c] = static_cast<T>((1 - m) * static_cast<double>(running_var[c]) +
                                      m * var * static_cast<double>(count) / static_cast<double>(count - 1));
    } else {
      mean = static_cast<double>(running_mean[c]);
      var = static_cast<double>(running_var[c]);
    }
    const T invstd = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEps));
    const T mu = static_cast<T>(mean);
    saved_mean[c] = mu;
    saved_invstd[c] = invstd;
    const T scale = gamma[c] * invstd;
    const T shift = beta[c] - mu * scale;
    for (std::size_t n = 0; n < x.n; ++n) {
      const T* r = x.row(n, c);
      T* o = y.row(n, c);
      for (std::size_t j = 0; j < x.l; ++j) o[j] = r[j] * scale + shift;
    }
  }
}

template <typename T>
void batchnorm_backward(const Tensor3<T>& x, std::span<const T> gamma, bool training,
                        std::span<const T> saved_mean, std::span<const T> saved_invstd,
                        const Tensor3<T>& dy, Tensor3<T>& dx, std::span<T> dgamma,
                        std::span<T> dbeta) {
  require(dy.same_shape(x), "batchnorm output gradient");
  dx = Tensor3<T>(x.n, x.c, x.l);
  const double count = static_cast<double>(x.n * x.l);
  for (std::size_t c = 0; c < x.c; ++c) {
    const double mu = static_cast<double>(saved_mean[c]);
    const double invstd = static_cast<double>(saved_invstd[c]);
    double sum_dy = 0, sum_dy_xhat = 0;
    for (std::size_t n = 0; n < x.n; ++n) {
      const T* r = x.row(n, c);
      const T* g = dy.row(n, c);
      for (std::size_t j = 0; j < x.l; ++j) {
        const double d = static_cast<double>(g[j]);
        sum_dy += d;
        sum_dy_xhat += d * (static_cast<double>(r[j]) - mu) * invstd;
      }
    }
    if (!dgamma.empty()) dgamma[c] += static_cast<T>(sum_dy_xhat);
    if (!dbeta.empty()) dbeta[c] += static_cast<T>(sum_dy);
    const double gscale = static_cast<double>(gamma[c]) * invstd;
    for (std::size_t n = 0; n < x.n; ++n) {
      const T* r = x.row(n, c);
      const T* g = dy.row(n, c);
      T* o = dx.row(n, c);
      if (training) {
        const double a = sum_dy / count;
        const double b = sum_dy_xhat / count;
        for (std::size_t j = 0; j < x.l; ++j) {
          const double xhat = (static_cast<double>(r[j]) - mu) * invstd;
          o[j] = static_cast<T>(gscale * (static_cast<double>(g[j]) - a - xhat * b));
        }
      } else {
        for (std::size_t j = 0; j < x.l; ++j) o[j] = static_cast<T>(gscale * static_cast<double>(g[j]));
      }
    }
  }
}

template <typename T>
void relu_forward(const Tensor3<T>& x, Tensor3<T>& y) {
  y = Tensor3<T>(x.n, x.c, x.l);
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] > T{0} ? x.data[i] : T{0};
}

template <typename T>
void relu_backward(const Tensor3<T>& y, const Tensor3<T>& dy, Tensor3<T>& dx) {
  require(dy.same_shape(y), "relu gradient");
  dx = Tensor3<T>(y.n, y.c, y.l);
  for (std::size_t i = 0; i < y.size(); ++i) dx.data[i] = y.data[i] > T{0} ? dy.data[i] : T{0};
}

template <typename T>
void avgpool_forward(const Tensor3<T>& x, Tensor3<T>& y) {
  require(x.l > 0, "pooling over empty length");
  y = Tensor3<T>(x.n, x.c, 1);
  for (std::size_t n = 0; n < x.n; ++n)
    for (std::size_t c = 0; c < x.c; ++c) {
      const T* r = x.row(n, c);
      double s = 0;
      for (std::size_t j = 0; j < x.l; ++j) s += static_cast<double>(r[j]);
      y.row(n, c)[0] = static_cast<T>(s / static_cast<double>(x.l));
    }
}

template <typename T>
void avgpool_backward(std::size_t length, const Tensor3<T>& dy, Tensor3<T>& dx) {
  dx = Tensor3<T>(dy.n, dy.c, length);
  const T inv = static_cast<T>(1.0 / static_cast<double>(length));
  for (std::size_t n = 0; n < dy.n; ++n)
    for (std::size_t c = 0; c < dy.c; ++c) {
      const T g = dy.row(n, c)[0] * inv;
      std::fill_n(dx.row(n, c), length, g);
    }
}

template <typename T>
void dense_forward(const Tensor3<T>& x, std::span<const T> weight, std::span<const T> bias,
                   std::size_t out_features, Tensor3<T>& y) {
  require(x.l == 1, "dense input must have length 1");
  require(weight.size() == out_features * x.c, "dense weight size");
  require(bias.empty() || bias.size() == out_features, "dense bias size");
  y = Tensor3<T>(x.n, out_features, 1);
  for (std::size_t n = 0; n < x.n; ++n) {
    const T* in = x.sample(n);
    T* out = y.sample(n);
    for (std::size_t o = 0; o < out_features; ++o) {
      const T* w = weight.data() + o * x.c;
      T acc = bias.empty() ? T{0} : bias[o];
      for (std::size_t i = 0; i < x.c; ++i) acc += w[i] * in[i];
      out[o] = acc;
    }
  }
}

template <typename T>
void dense_backward(const Tensor3<T>& x, std::span<const T> weight, std::size_t out_features,
                    const Tensor3<T>& dy, Tensor3<T>* dx, std::span<T> dweight,
                    std::span<T> dbias) {
  require(dy.n == x.n && dy.c == out_features && dy.l == 1, "dense output gradient");
  if (dx) *dx = Tensor3<T>(x.n, x.c, 1);
  for (std::size_t n = 0; n < x.n; ++n) {
    const T* in = x.sample(n);
    const T* g = dy.sample(n);
    for (std::size_t o = 0; o < out_features; ++o) {
      if (!dweight.empty()) {
        T* dw = dweight.data() + o * x.c;
        for (std::size_t i = 0; i < x.c; ++i) dw[i] += g[o] * in[i];
      }
      if (!dbias.empty()) dbias[o] += g[o];
      if (dx) {
        const T* w = weight.data() + o * x.c;
        T* gx = dx->sample(n);
        for (std::size_t i = 0; i < x.c; ++i) gx[i] += g[o] * w[i];
      }
    }
  }
}

template <typename T>
void sigmoid_forward(const Tensor3<T>& x, Tensor3<T>& y) {
  y = Tensor3<T>(x.n, x.c, x.l);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x.data[i];
    // Stable for large |v|.
    y.data[i] = v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
  }
}

template <typename T>
void sigmoid_backward(const Tensor3<T>& y, const Tensor3<T>& dy, Tensor3<T>& dx) {
  dx = Tensor3<T>(y.n, y.c, y.l);
  for (std::size_t i = 0; i < y.size(); ++i)
    dx.data[i] = dy.data[i] * y.data[i] * (T{1} - y.data[i]);
}

template <typename T>
void channel_scale_forward(const Tensor3<T>& x, const Tensor3<T>& gate, Tensor3<T>& y) {
  require(gate.n == x.n && gate.c == x.c && gate.l == 1, "channel gate shape");
  y = Tensor3<T>(x.n, x.c, x.l);
  for (std::size_t n = 0; n < x.n; ++n)
    for (std::size_t c = 0; c < x.c; ++c) {
      const T g = gate.row(n, c)[0];
      const T* r = x.row(n, c);
      T* o = y.row(n, c);
      for (std::size_t j = 0; j < x.l; ++j) o[j] = r[j] * g;
    }
}

template <typename T>
void channel_scale_backward(const Tensor3<T>& x, const Tensor3<T>& gate, const Tensor3<T>& dy,
                            Tensor3<T>& dx, Tensor3<T>& dgate) {
  dx = Tensor3<T>(x.n, x.c, x.l);
  dgate = Tensor3<T>(x.n, x.c, 1);
  for (std::size_t n = 0; n < x.n; ++n)
    for (std::size_t c = 0; c < x.c; ++c) {
      const T g = gate.row(n, c)[0];
      const T* r = x.row(n, c);
      const T* d = dy.row(n, c);
      T* o = dx.row(n, c);
      double acc = 0;
      for (std::size_t j = 0; j < x.l; ++j) {
        o[j] = d[j] * g;
        acc += static_cast<double>(d[j]) * static_cast<double>(r[j]);
      }
      dgate.row(n, c)[0] = static_cast<T>(acc);
    }
}

template <typename T>
Tensor3<T> squeeze_excite(const Tensor3<T>& x, const SeWeights<T>& w) {
  require(w.channels == x.c, "squeeze-excite channel count");
  Tensor3<T> pooled, hidden, hidden_act, logits, gate, y;
  avgpool_forward(x, pooled);
  dense_forward<T>(pooled, w.reduce_weight, w.reduce_bias, w.reduced, hidden);
  relu_forward(hidden, hidden_act);
  dense_forward<T>(hidden_act, w.expand_weight, w.expand_bias, w.channels, logits);
  sigmoid_forward(logits, gate);
  channel_scale_forward(x, gate, y);
  return y;
}

#define ECGF_INSTANTIATE_TENSOR_OPS(T)                                                          \
  template void conv1d_forward<T>(const Tensor3<T>&, std::span<const T>, std::span<const T>,   \
                                  const ConvShape&, Tensor3<T>&);                               \
  template void conv1d_backward<T>(const Tensor3<T>&, std::span<const T>, const ConvShape&,    \
                                   const Tensor3<T>&, Tensor3<T>*, std::span<T>, std::span<T>); \
  template Tensor3<T> conv1d<T>(const Tensor3<T>&, std::span<const T>, std::span<const T>,     \
                                std::size_t, std::size_t, std::size_t, std::size_t);            \
  template void batchnorm_forward<T>(const Tensor3<T>&, std::span<const T>, std::span<const T>, \
                                     std::span<T>, std::span<T>, bool, Tensor3<T>&,             \
                                     std::vector<T>&, std::vector<T>&);                         \
  template void batchnorm_backward<T>(const Tensor3<T>&, std::span<const T>, bool,             \
                                      std::span<const T>, std::span<const T>,                   \
                                      const Tensor3<T>&, Tensor3<T>&, std::span<T>,             \
                                      std::span<T>);                                            \
  template void relu_forward<T>(const Tensor3<T>&, Tensor3<T>&);                               \
  template void relu_backward<T>(const Tensor3<T>&, const Tensor3<T>&, Tensor3<T>&);           \
  template void avgpool_forward<T>(const Tensor3<T>&, Tensor3<T>&);                            \
  template void avgpool_backward<T>(std::size_t, const Tensor3<T>&, Tensor3<T>&);              \
  template void dense_forward<T>(const Tensor3<T>&, std::span<const T>, std::span<const T>,    \
                                 std::size_t, Tensor3<T>&);                                     \
  template void dense_backward<T>(const Tensor3<T>&, std::span<const T>, std::size_t,          \
                                  const Tensor3<T>&, Tensor3<T>*, std::span<T>, std::span<T>);  \
  template void sigmoid_forward<T>(const Tensor3<T>&, Tensor3<T>&);                            \
  template void sigmoid_backward<T>(const Tensor3<T>&, const Tensor3<T>&, Tensor3<T>&);        \
  template void channel_scale_forward<T>(const Tensor3<T>&, const Tensor3<T>&, Tensor3<T>&);   \
  template void channel_scale_backward<T>(const Tensor3<T>&, const Tensor3<T>&,                \
                                          const Tensor3<T>&, Tensor3<T>&, Tensor3<T>&);         \
  template Tensor3<T> squeeze_excite<T>(const Tensor3<T>&, const SeWeights<T>&);

ECGF_INSTANTIATE_TENSOR_OPS(float)
ECGF_INSTANTIATE_TENSOR_OPS(double)

#undef ECGF_INSTANTIATE_TENSOR_OPS

}  // namespace ecgf::nn

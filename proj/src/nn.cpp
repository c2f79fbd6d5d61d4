// SPDX-License-Identifier: Apache-2.0

#include "mcf/nn.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <vector>

#include "eigen_util.hpp"

namespace mcf {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng, bool requires_grad) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>::from(std::move(shape), std::move(values), requires_grad);
}

template <typename T>
LinearParams<T> LinearParams<T>::create(std::size_t in, std::size_t out, Rng& rng) {
  const double s = std::sqrt(1.0 / static_cast<double>(in));
  LinearParams p;
  p.weight = uniform_tensor<T>({in, out}, s, rng);
  p.bias = uniform_tensor<T>({out}, s, rng);
  return p;
}

template <typename T>
LayerNormParams<T> LayerNormParams<T>::create(std::size_t channels) {
  LayerNormParams p;
  p.gamma = Tensor<T>::full({channels}, T(1), true);
  p.beta = Tensor<T>::zeros({channels}, true);
  return p;
}

template <typename T>
DepthwiseConvParams<T> DepthwiseConvParams<T>::create(std::size_t channels,
                                                      std::size_t kernel_size, Rng& rng) {
  if (kernel_size % 2 == 0) {
    throw ConfigError("depthwise kernel size must be odd, got " + std::to_string(kernel_size));
  }
  const double s = std::sqrt(1.0 / static_cast<double>(kernel_size));
  DepthwiseConvParams p;
  p.kernel_size = kernel_size;
  p.weight = uniform_tensor<T>({channels, kernel_size}, s, rng);
  p.bias = uniform_tensor<T>({channels}, s, rng);
  return p;
}

template <typename T>
GroupedConvParams<T> GroupedConvParams<T>::create(std::size_t in_channels, std::size_t groups,
                                                  std::size_t kernel_size, Rng& rng) {
  if (kernel_size % 2 == 0) {
    throw ConfigError("grouped kernel size must be odd, got " + std::to_string(kernel_size));
  }
  if (groups == 0 || in_channels % groups != 0) {
    throw ConfigError(std::to_string(groups) + " groups do not divide " +
                      std::to_string(in_channels) + " input channels");
  }
  GroupedConvParams p;
  p.kernel_size = kernel_size;
  p.groups = groups;
  p.in_per_group = in_channels / groups;
  const double s = std::sqrt(1.0 / static_cast<double>(p.in_per_group * kernel_size));
  p.weight = uniform_tensor<T>({groups, p.in_per_group, kernel_size}, s, rng);
  p.bias = uniform_tensor<T>({groups}, s, rng);
  return p;
}

template <typename T>
Conv2dParams<T> Conv2dParams<T>::create(std::size_t in_channels, std::size_t out_channels,
                                        Rng& rng) {
  const double s = std::sqrt(1.0 / static_cast<double>(in_channels * 9));
  Conv2dParams p;
  p.weight = uniform_tensor<T>({out_channels, in_channels, 3, 3}, s, rng);
  p.bias = uniform_tensor<T>({out_channels}, s, rng);
  return p;
}

template <typename T>
SubsamplerParams<T> SubsamplerParams<T>::create(std::size_t feature_dim, std::size_t d_model,
                                                Rng& rng) {
  const std::size_t reduced = subsampled_length(feature_dim);
  if (reduced == 0) {
    throw ConfigError("feature dimension " + std::to_string(feature_dim) + " is too small");
  }
  SubsamplerParams p;
  p.feature_dim = feature_dim;
  p.conv1 = Conv2dParams<T>::create(1, d_model, rng);
  p.conv2 = Conv2dParams<T>::create(d_model, d_model, rng);
  p.out = LinearParams<T>::create(d_model * reduced, d_model, rng);
  return p;
}

// ---- projections and normalization ----------------------------------------

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p) {
  if (x.dim(x.rank() - 1) != p.in_features()) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(p.weight.shape()));
  }
  return add_bias(matmul(x, p.weight), p.bias);
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const LayerNormParams<T>& p) {
  const std::size_t c = x.dim(x.rank() - 1);
  if (c != p.channels()) {
    throw DimensionError("layer_norm: input " + shape_str(x.shape()) + " vs " +
                         std::to_string(p.channels()) + " channels");
  }
  const std::size_t rows = x.numel() / c;
  auto out = make_output<T>(x.shape(), {&x, &p.gamma, &p.beta});
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  const T eps = static_cast<T>(p.eps);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * c;
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(c);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (xr[j] - mu) * is;
      (*xhat)[r * c + j] = h;
      out.at(r * c + j) = h * p.gamma.at(j) + p.beta.at(j);
    }
  }
  record<T>(out, [x, gamma = p.gamma, beta = p.beta, out, xhat, inv_std, rows, c] {
    const auto g = out.grad();
    std::vector<T> dh(c);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* hr = xhat->data() + r * c;
      const T* gr = g.data() + r * c;
      if (gamma.requires_grad())
        for (std::size_t j = 0; j < c; ++j) gamma.node()->grad[j] += gr[j] * hr[j];
      if (beta.requires_grad())
        for (std::size_t j = 0; j < c; ++j) beta.node()->grad[j] += gr[j];
      if (!x.requires_grad()) continue;
      T mean_dh = 0, mean_dh_h = 0;
      for (std::size_t j = 0; j < c; ++j) {
        dh[j] = gr[j] * gamma.at(j);
        mean_dh += dh[j];
        mean_dh_h += dh[j] * hr[j];
      }
      mean_dh /= static_cast<T>(c);
      mean_dh_h /= static_cast<T>(c);
      const T is = (*inv_std)[r];
      for (std::size_t j = 0; j < c; ++j)
        x.node()->grad[r * c + j] += is * (dh[j] - mean_dh - hr[j] * mean_dh_h);
    }
  });
  return out;
}

// ---- activations ----------------------------------------------------------

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  auto out = make_output<T>(x.shape(), {&x});
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T v = x.at(i);
    out.at(i) = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  }
  record<T>(out, [x, out, inv_sqrt2] {
    const auto g = out.grad();
    const T inv_sqrt_2pi = static_cast<T>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = x.at(i);
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      x.node()->grad[i] += g[i] * (cdf + v * pdf);
    }
  });
  return out;
}

template <typename T>
Tensor<T> swish(const Tensor<T>& x) {
  auto out = make_output<T>(x.shape(), {&x});
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T v = x.at(i);
    out.at(i) = v / (T(1) + std::exp(-v));
  }
  record<T>(out, [x, out] {
    const auto g = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = x.at(i);
      const T s = T(1) / (T(1) + std::exp(-v));
      x.node()->grad[i] += g[i] * (s + v * s * (T(1) - s));
    }
  });
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  const std::size_t n = x.dim(x.rank() - 1);
  const std::size_t rows = x.numel() / n;
  auto out = make_output<T>(x.shape(), {&x});
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * n;
    T* yr = out.data().data() + r * n;
    const T mx = *std::max_element(xr, xr + n);
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) z += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
  }
  record<T>(out, [x, out, rows, n] {
    const auto g = out.grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = out.data().data() + r * n;
      const T* gr = g.data() + r * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
      for (std::size_t j = 0; j < n; ++j) x.node()->grad[r * n + j] += yr[j] * (gr[j] - dot);
    }
  });
  return out;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  const std::size_t n = x.dim(x.rank() - 1);
  const std::size_t rows = x.numel() / n;
  auto out = make_output<T>(x.shape(), {&x});
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * n;
    T* yr = out.data().data() + r * n;
    const T mx = *std::max_element(xr, xr + n);
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(xr[j] - mx);
    const T lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) yr[j] = xr[j] - lse;
  }
  record<T>(out, [x, out, rows, n] {
    const auto g = out.grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = out.data().data() + r * n;
      const T* gr = g.data() + r * n;
      T gs = 0;
      for (std::size_t j = 0; j < n; ++j) gs += gr[j];
      for (std::size_t j = 0; j < n; ++j)
        x.node()->grad[r * n + j] += gr[j] - std::exp(yr[j]) * gs;
    }
  });
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& m : *mask) m = u(rng) >= rate ? keep_scale : T(0);
  auto out = make_output<T>(x.shape(), {&x});
  for (std::size_t i = 0; i < x.numel(); ++i) out.at(i) = x.at(i) * (*mask)[i];
  record<T>(out, [x, out, mask] {
    const auto g = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i) x.node()->grad[i] += g[i] * (*mask)[i];
  });
  return out;
}

// ---- 1-D convolutions -----------------------------------------------------

template <typename T>
Tensor<T> depthwise_conv1d(const Tensor<T>& x, const DepthwiseConvParams<T>& p) {
  if (x.rank() != 2 || x.dim(1) != p.channels()) {
    throw DimensionError("depthwise_conv1d: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(p.weight.shape()));
  }
  const std::size_t frames = x.dim(0), c = x.dim(1), k = p.kernel_size;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k - 1) / 2;
  const auto& w = p.weight;
  const auto& b = p.bias;
  auto out = make_output<T>({frames, c}, {&x, &w, &b});
  // Tap-major weights so the channel loop is contiguous.
  std::vector<T> wt(k * c);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t j = 0; j < k; ++j) wt[j * c + ch] = w.at(ch * k + j);
  for (std::size_t t = 0; t < frames; ++t) {
    T* o = out.data().data() + t * c;
    for (std::size_t ch = 0; ch < c; ++ch) o[ch] = b.at(ch);
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - pad;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
      const T* xs = x.data().data() + src * c;
      const T* wj = wt.data() + j * c;
      for (std::size_t ch = 0; ch < c; ++ch) o[ch] += wj[ch] * xs[ch];
    }
  }
  record<T>(out, [x, w, b, out, frames, c, k, pad] {
    const auto g = out.grad();
    if (b.requires_grad())
      for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t ch = 0; ch < c; ++ch) b.node()->grad[ch] += g[t * c + ch];
    std::vector<T> dwt(k * c, T(0));
    for (std::size_t t = 0; t < frames; ++t) {
      const T* gt = g.data() + t * c;
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - pad;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
        const T* xs = x.data().data() + src * c;
        T* dw = dwt.data() + j * c;
        for (std::size_t ch = 0; ch < c; ++ch) dw[ch] += gt[ch] * xs[ch];
        if (x.requires_grad()) {
          T* dx = x.node()->grad.data() + src * c;
          for (std::size_t ch = 0; ch < c; ++ch) dx[ch] += gt[ch] * w.at(ch * k + j);
        }
      }
    }
    if (w.requires_grad())
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t j = 0; j < k; ++j) w.node()->grad[ch * k + j] += dwt[j * c + ch];
  });
  return out;
}

template <typename T>
Tensor<T> grouped_conv1d(const Tensor<T>& x, const GroupedConvParams<T>& p) {
  const std::size_t groups = p.groups, m = p.in_per_group, k = p.kernel_size;
  if (x.rank() != 2 || x.dim(1) != groups * m) {
    throw DimensionError("grouped_conv1d: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(p.weight.shape()));
  }
  const std::size_t frames = x.dim(0), cin = x.dim(1);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k - 1) / 2;
  const auto& w = p.weight;
  const auto& b = p.bias;
  auto out = make_output<T>({frames, groups}, {&x, &w, &b});
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t g = 0; g < groups; ++g) {
      T acc = b.at(g);
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - pad;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
        const T* xs = x.data().data() + src * cin + g * m;
        for (std::size_t i = 0; i < m; ++i) acc += w.at((g * m + i) * k + j) * xs[i];
      }
      out.at(t * groups + g) = acc;
    }
  }
  record<T>(out, [x, w, b, out, frames, cin, groups, m, k, pad] {
    const auto gr = out.grad();
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t g = 0; g < groups; ++g) {
        const T go = gr[t * groups + g];
        if (b.requires_grad()) b.node()->grad[g] += go;
        for (std::size_t j = 0; j < k; ++j) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - pad;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
          const std::size_t base = src * cin + g * m;
          for (std::size_t i = 0; i < m; ++i) {
            const std::size_t wi = (g * m + i) * k + j;
            if (w.requires_grad()) w.node()->grad[wi] += go * x.at(base + i);
            if (x.requires_grad()) x.node()->grad[base + i] += go * w.at(wi);
          }
        }
      }
    }
  });
  return out;
}

// ---- front-end ------------------------------------------------------------

template <typename T>
Tensor<T> conv2d_stride2(const Tensor<T>& x, const Conv2dParams<T>& p) {
  const std::size_t cout = p.weight.dim(0), cin = p.weight.dim(1);
  if (x.rank() != 3 || x.dim(0) != cin) {
    throw DimensionError("conv2d_stride2: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(p.weight.shape()));
  }
  const std::size_t h = x.dim(1), w = x.dim(2);
  const std::size_t ho = conv_stride2_length(h), wo = conv_stride2_length(w);
  if (ho == 0 || wo == 0) {
    throw InputError("conv2d_stride2: input " + shape_str(x.shape()) + " is smaller than the kernel");
  }
  const std::size_t taps = cin * 9, positions = ho * wo;
  // im2col: cols[tap, position]
  auto cols = std::make_shared<Buffer<T>>(taps * positions);
  for (std::size_t ci = 0; ci < cin; ++ci)
    for (std::size_t dy = 0; dy < 3; ++dy)
      for (std::size_t dx = 0; dx < 3; ++dx) {
        T* row = cols->data() + ((ci * 3 + dy) * 3 + dx) * positions;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const T* src = x.data().data() + (ci * h + 2 * oy + dy) * w + dx;
          for (std::size_t ox = 0; ox < wo; ++ox) row[oy * wo + ox] = src[2 * ox];
        }
      }
  const auto& wt = p.weight;
  const auto& b = p.bias;
  auto out = make_output<T>({cout, ho, wo}, {&x, &wt, &b});
  auto om = map_mat(out.data().data(), cout, positions);
  om.noalias() = map_mat(wt.data().data(), cout, taps) * map_mat(cols->data(), taps, positions);
  for (std::size_t co = 0; co < cout; ++co) om.row(co).array() += b.at(co);
  record<T>(out, [x, wt, b, out, cols, cin, cout, h, w, ho, wo, taps, positions] {
    const auto g = map_mat(out.grad().data(), cout, positions);
    if (b.requires_grad())
      for (std::size_t co = 0; co < cout; ++co) b.node()->grad[co] += g.row(co).sum();
    if (wt.requires_grad())
      map_mat(wt.node()->grad.data(), cout, taps).noalias() +=
          g * map_mat(cols->data(), taps, positions).transpose();
    if (!x.requires_grad()) return;
    RowMat<T> dcols = map_mat(wt.data().data(), cout, taps).transpose() * g;
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t dy = 0; dy < 3; ++dy)
        for (std::size_t dx = 0; dx < 3; ++dx) {
          const T* row = dcols.data() + ((ci * 3 + dy) * 3 + dx) * positions;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            T* dst = x.node()->grad.data() + (ci * h + 2 * oy + dy) * w + dx;
            for (std::size_t ox = 0; ox < wo; ++ox) dst[2 * ox] += row[oy * wo + ox];
          }
        }
  });
  return out;
}

template <typename T>
Tensor<T> channels_to_frames(const Tensor<T>& x) {
  if (x.rank() != 3) throw DimensionError("channels_to_frames expects [C,T,F], got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), frames = x.dim(1), f = x.dim(2);
  auto out = make_output<T>({frames, c * f}, {&x});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t t = 0; t < frames; ++t)
      std::copy_n(x.data().begin() + (ch * frames + t) * f, f,
                  out.data().begin() + t * c * f + ch * f);
  record<T>(out, [x, out, c, frames, f] {
    const auto g = out.grad();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t i = 0; i < f; ++i)
          x.node()->grad[(ch * frames + t) * f + i] += g[t * c * f + ch * f + i];
  });
  return out;
}

template <typename T>
Tensor<T> subsample(const Tensor<T>& x, const SubsamplerParams<T>& p) {
  if (x.rank() != 2 || x.dim(1) != p.feature_dim) {
    throw DimensionError("subsample: expected [L," + std::to_string(p.feature_dim) + "], got " +
                         shape_str(x.shape()));
  }
  if (x.dim(0) < min_subsample_input) {
    throw InputError("subsample: input of " + std::to_string(x.dim(0)) +
                     " frames is shorter than the minimum of " +
                     std::to_string(min_subsample_input));
  }
  auto h = reshape(x, {1, x.dim(0), x.dim(1)});
  h = relu(conv2d_stride2(h, p.conv1));
  h = relu(conv2d_stride2(h, p.conv2));
  return linear(channels_to_frames(h), p.out);
}

template <typename T>
Tensor<T> sinusoidal_positions(std::size_t frames, std::size_t d_model) {
  auto pe = Tensor<T>::zeros({frames, d_model});
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d_model));
      pe.at(t, i) = static_cast<T>(std::sin(static_cast<double>(t) * freq));
      if (i + 1 < d_model) pe.at(t, i + 1) = static_cast<T>(std::cos(static_cast<double>(t) * freq));
    }
  }
  return pe;
}

#define MCF_INSTANTIATE(T)                                                                 \
  template Tensor<T> uniform_tensor<T>(Shape, double, Rng&, bool);                        \
  template struct LinearParams<T>;                                                        \
  template struct LayerNormParams<T>;                                                     \
  template struct DepthwiseConvParams<T>;                                                 \
  template struct GroupedConvParams<T>;                                                   \
  template struct Conv2dParams<T>;                                                        \
  template struct SubsamplerParams<T>;                                                    \
  template Tensor<T> linear<T>(const Tensor<T>&, const LinearParams<T>&);                 \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const LayerNormParams<T>&);          \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                           \
  template Tensor<T> swish<T>(const Tensor<T>&);                                          \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                        \
  template Tensor<T> log_softmax<T>(const Tensor<T>&);                                    \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, bool, Rng&);                    \
  template Tensor<T> depthwise_conv1d<T>(const Tensor<T>&, const DepthwiseConvParams<T>&); \
  template Tensor<T> grouped_conv1d<T>(const Tensor<T>&, const GroupedConvParams<T>&);    \
  template Tensor<T> conv2d_stride2<T>(const Tensor<T>&, const Conv2dParams<T>&);         \
  template Tensor<T> channels_to_frames<T>(const Tensor<T>&);                             \
  template Tensor<T> subsample<T>(const Tensor<T>&, const SubsamplerParams<T>&);          \
  template Tensor<T> sinusoidal_positions<T>(std::size_t, std::size_t);

MCF_INSTANTIATE(float)
MCF_INSTANTIATE(double)

}  // namespace mcf

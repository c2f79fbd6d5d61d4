// SPDX-License-Identifier: Apache-2.0
//
// Neural building blocks shared by the encoder: projections, normalization,
// activations, dropout, 1-D depthwise/grouped convolutions, the stride-4
// convolutional front-end and sinusoidal positions.
//
// Parameter records expose `visit(prefix, f)`, calling f(name, tensor) for
// every learnable tensor in a fixed order. Counting, checkpointing and the
// optimizer all walk parameters through it.

#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "mcf/tensor.hpp"

namespace mcf {

using Rng = std::mt19937_64;

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng, bool requires_grad = true);

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  // Weights and bias ~ U(-s, s) with s = sqrt(1 / in).
  static LinearParams create(std::size_t in, std::size_t out, Rng& rng);
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  double eps = 1e-12;

  static LayerNormParams create(std::size_t channels);
  std::size_t channels() const { return gamma.dim(0); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
};

// One filter per channel, symmetric zero "same" padding.
template <typename T>
struct DepthwiseConvParams {
  std::size_t kernel_size = 0;
  Tensor<T> weight;  // [C, k]
  Tensor<T> bias;    // [C]

  static DepthwiseConvParams create(std::size_t channels, std::size_t kernel_size, Rng& rng);
  std::size_t channels() const { return weight.dim(0); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

// Group g reads the contiguous input channels [g*in_per_group, (g+1)*in_per_group)
// and writes output channel g.
template <typename T>
struct GroupedConvParams {
  std::size_t kernel_size = 0;
  std::size_t groups = 0;
  std::size_t in_per_group = 0;
  Tensor<T> weight;  // [G, in_per_group, k]
  Tensor<T> bias;    // [G]

  static GroupedConvParams create(std::size_t in_channels, std::size_t groups,
                                  std::size_t kernel_size, Rng& rng);

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

// 3x3 convolution with stride 2 and no padding over [C, time, freq] maps.
template <typename T>
struct Conv2dParams {
  Tensor<T> weight;  // [C_out, C_in, 3, 3]
  Tensor<T> bias;    // [C_out]

  static Conv2dParams create(std::size_t in_channels, std::size_t out_channels, Rng& rng);

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

// Two stride-2 convolutions (ReLU after each) and a flattening projection.
template <typename T>
struct SubsamplerParams {
  std::size_t feature_dim = 80;
  Conv2dParams<T> conv1;
  Conv2dParams<T> conv2;
  LinearParams<T> out;  // [d * reduced_feature_dim, d]

  static SubsamplerParams create(std::size_t feature_dim, std::size_t d_model, Rng& rng);

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    conv1.visit(prefix + ".conv1", f);
    conv2.visit(prefix + ".conv2", f);
    out.visit(prefix + ".out", f);
  }
};

// Output length of one unpadded 3-wide stride-2 convolution.
constexpr std::size_t conv_stride2_length(std::size_t n) { return n < 3 ? 0 : (n - 1) / 2; }
// T = floor((floor((L-1)/2) - 1) / 2); zero when L < 7.
constexpr std::size_t subsampled_length(std::size_t n) {
  return conv_stride2_length(conv_stride2_length(n));
}
constexpr std::size_t min_subsample_input = 7;

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p);
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const LayerNormParams<T>& p);
// Exact erf-based GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
template <typename T>
Tensor<T> swish(const Tensor<T>& x);
// Softmax over the last axis, max-shifted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x);
// Inverted dropout. Identity when !training or rate == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng);
template <typename T>
Tensor<T> depthwise_conv1d(const Tensor<T>& x, const DepthwiseConvParams<T>& p);
template <typename T>
Tensor<T> grouped_conv1d(const Tensor<T>& x, const GroupedConvParams<T>& p);
template <typename T>
Tensor<T> conv2d_stride2(const Tensor<T>& x, const Conv2dParams<T>& p);
// [C, T, F] -> [T, C*F], channel-major within each frame.
template <typename T>
Tensor<T> channels_to_frames(const Tensor<T>& x);
template <typename T>
Tensor<T> subsample(const Tensor<T>& x, const SubsamplerParams<T>& p);
// PE[t, 2i] = sin(t / 10000^(2i/d)), PE[t, 2i+1] = cos(...).
template <typename T>
Tensor<T> sinusoidal_positions(std::size_t frames, std::size_t d_model);

}  // namespace mcf

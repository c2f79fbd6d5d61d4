// SPDX-License-Identifier: Apache-2.0

#include "mcf/multiconv.hpp"

#include <algorithm>

namespace mcf {

std::string to_string(FusionKind kind) {
  switch (kind) {
    case FusionKind::Sum:
      return "sum";
    case FusionKind::Weighted:
      return "weighted";
    case FusionKind::Concat:
      return "concat";
    case FusionKind::Depth:
      return "depth";
  }
  return "?";
}

FusionKind parse_fusion(const std::string& name) {
  if (name == "sum") return FusionKind::Sum;
  if (name == "weighted") return FusionKind::Weighted;
  if (name == "concat") return FusionKind::Concat;
  if (name == "depth") return FusionKind::Depth;
  throw ConfigError("unknown fusion '" + name + "' (expected sum, weighted, concat or depth)");
}

namespace {

void validate_kernels(const std::vector<std::size_t>& kernels) {
  if (kernels.empty()) throw ConfigError("kernel set must not be empty");
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    if (kernels[i] % 2 == 0) {
      throw ConfigError("kernel sizes must be odd, got " + std::to_string(kernels[i]));
    }
    if (i > 0 && kernels[i] <= kernels[i - 1]) {
      throw ConfigError("kernel sizes must be strictly increasing");
    }
  }
}

}  // namespace

template <typename T>
McsguParams<T> McsguParams<T>::create(std::size_t d_inter, std::vector<std::size_t> kernels,
                                      FusionKind fusion, std::size_t final_kernel, Rng& rng) {
  validate_kernels(kernels);
  if (d_inter == 0 || d_inter % 2 != 0) {
    throw ConfigError("d_inter must be even, got " + std::to_string(d_inter));
  }
  McsguParams p;
  p.d_prime = d_inter / 2;
  p.kernels = std::move(kernels);
  p.fusion = fusion;
  p.gate_norm = LayerNormParams<T>::create(p.d_prime);
  const std::size_t count = p.kernels.size();
  switch (fusion) {
    case FusionKind::Sum:
    case FusionKind::Weighted:
      for (auto k : p.kernels) p.depthwise.push_back(DepthwiseConvParams<T>::create(p.d_prime, k, rng));
      if (fusion == FusionKind::Weighted) p.weighted_ffn = LinearParams<T>::create(p.d_prime, count, rng);
      break;
    case FusionKind::Concat:
    case FusionKind::Depth: {
      if (p.d_prime % count != 0) {
        throw ConfigError(std::to_string(count) + " kernels do not divide d' = " +
                          std::to_string(p.d_prime));
      }
      for (auto k : p.kernels)
        p.grouped.push_back(GroupedConvParams<T>::create(p.d_prime, p.d_prime / count, k, rng));
      if (fusion == FusionKind::Depth) {
        const std::size_t kf = final_kernel ? final_kernel : p.kernels.back();
        p.final_depthwise = DepthwiseConvParams<T>::create(p.d_prime, kf, rng);
      }
      break;
    }
  }
  return p;
}

template <typename T>
Tensor<T> fusion_sum(const std::vector<Tensor<T>>& v) {
  if (v.empty()) throw ContractError("fusion_sum needs at least one input");
  Tensor<T> acc = v[0];
  for (std::size_t i = 1; i < v.size(); ++i) acc = add(acc, v[i]);
  return acc;
}

template <typename T>
WeightedFusion<T> fusion_weighted(const std::vector<Tensor<T>>& v, const Tensor<T>& z_r,
                                  const LinearParams<T>& ffn) {
  if (v.empty()) throw ContractError("fusion_weighted needs at least one input");
  if (ffn.out_features() != v.size()) {
    throw ConfigError("weighted fusion FFN produces " + std::to_string(ffn.out_features()) +
                      " weights for " + std::to_string(v.size()) + " kernels");
  }
  const std::size_t channels = v[0].dim(1);
  auto alpha = softmax(linear(z_r, ffn));
  Tensor<T> acc;
  for (std::size_t i = 0; i < v.size(); ++i) {
    auto weighted = mul(expand_channels(slice_channels(alpha, i, i + 1), channels), v[i]);
    acc = i == 0 ? weighted : add(acc, weighted);
  }
  return {acc, alpha};
}

template <typename T>
Tensor<T> fusion_concat(const std::vector<Tensor<T>>& v) {
  if (v.empty()) throw ContractError("fusion_concat needs at least one input");
  for (const auto& part : v) {
    if (part.shape() != v[0].shape()) {
      throw DimensionError("fusion_concat: part " + shape_str(part.shape()) + " differs from " +
                           shape_str(v[0].shape()));
    }
  }
  if (v.size() == 1) return v[0];
  return concat_channels(v);
}

template <typename T>
Tensor<T> fusion_depth(const std::vector<Tensor<T>>& v, const DepthwiseConvParams<T>& final_conv) {
  return depthwise_conv1d(fusion_concat(v), final_conv);
}

namespace {

template <typename T>
std::pair<Tensor<T>, Tensor<T>> gate_halves(const Tensor<T>& a_hat, std::size_t d_prime) {
  if (a_hat.rank() != 2 || a_hat.dim(1) % 2 != 0) {
    throw DimensionError("gating unit input must have an even channel count, got " +
                         shape_str(a_hat.shape()));
  }
  if (a_hat.dim(1) != 2 * d_prime) {
    throw DimensionError("gating unit input " + shape_str(a_hat.shape()) + " does not match d' = " +
                         std::to_string(d_prime));
  }
  return split_channels(a_hat, d_prime);
}

}  // namespace

template <typename T>
McsguOutput<T> mcsgu_forward(const Tensor<T>& a_hat, const McsguParams<T>& p, bool capture_alpha) {
  if (capture_alpha && p.fusion != FusionKind::Weighted) {
    throw ContractError("alpha capture requires weighted fusion, unit uses " + to_string(p.fusion));
  }
  auto [z_l, z_r] = gate_halves(a_hat, p.d_prime);
  z_r = layer_norm(z_r, p.gate_norm);

  std::vector<Tensor<T>> v;
  v.reserve(p.num_kernels());
  McsguOutput<T> result;
  Tensor<T> fused;
  switch (p.fusion) {
    case FusionKind::Sum:
      for (const auto& conv : p.depthwise) v.push_back(depthwise_conv1d(z_r, conv));
      fused = fusion_sum(v);
      break;
    case FusionKind::Weighted: {
      for (const auto& conv : p.depthwise) v.push_back(depthwise_conv1d(z_r, conv));
      auto w = fusion_weighted(v, z_r, *p.weighted_ffn);
      fused = w.output;
      if (capture_alpha) result.alpha = w.alpha;
      break;
    }
    case FusionKind::Concat:
      for (const auto& conv : p.grouped) v.push_back(grouped_conv1d(z_r, conv));
      fused = fusion_concat(v);
      break;
    case FusionKind::Depth:
      for (const auto& conv : p.grouped) v.push_back(grouped_conv1d(z_r, conv));
      fused = fusion_depth(v, *p.final_depthwise);
      break;
  }
  result.output = mul(z_l, fused);
  return result;
}

template <typename T>
Tensor<T> csgu_forward(const Tensor<T>& a_hat, const DepthwiseConvParams<T>& kernel,
                       const LayerNormParams<T>& norm) {
  auto [z_l, z_r] = gate_halves(a_hat, norm.channels());
  z_r = layer_norm(z_r, norm);
  return mul(z_l, depthwise_conv1d(z_r, kernel));
}

// ---- blocks ---------------------------------------------------------------

template <typename T>
MultiConvBlockParams<T> MultiConvBlockParams<T>::create(std::size_t d_model, std::size_t d_inter,
                                                        std::vector<std::size_t> kernels,
                                                        FusionKind fusion, std::size_t final_kernel,
                                                        double dropout, Rng& rng) {
  MultiConvBlockParams p;
  p.pre_norm = LayerNormParams<T>::create(d_model);
  p.up_proj = LinearParams<T>::create(d_model, d_inter, rng);
  p.mcsgu = McsguParams<T>::create(d_inter, std::move(kernels), fusion, final_kernel, rng);
  p.down_proj = LinearParams<T>::create(d_inter / 2, d_model, rng);
  p.dropout = dropout;
  return p;
}

template <typename T>
CsguBlockParams<T> CsguBlockParams<T>::create(std::size_t d_model, std::size_t d_inter,
                                              std::size_t kernel, double dropout, Rng& rng) {
  if (d_inter == 0 || d_inter % 2 != 0) {
    throw ConfigError("d_inter must be even, got " + std::to_string(d_inter));
  }
  CsguBlockParams p;
  p.pre_norm = LayerNormParams<T>::create(d_model);
  p.up_proj = LinearParams<T>::create(d_model, d_inter, rng);
  p.gate_norm = LayerNormParams<T>::create(d_inter / 2);
  p.conv = DepthwiseConvParams<T>::create(d_inter / 2, kernel, rng);
  p.down_proj = LinearParams<T>::create(d_inter / 2, d_model, rng);
  p.dropout = dropout;
  return p;
}

template <typename T>
ConformerConvParams<T> ConformerConvParams<T>::create(std::size_t d_model, std::size_t kernel,
                                                      double dropout, Rng& rng) {
  ConformerConvParams p;
  p.pre_norm = LayerNormParams<T>::create(d_model);
  p.pointwise1 = LinearParams<T>::create(d_model, 2 * d_model, rng);
  p.depthwise = DepthwiseConvParams<T>::create(d_model, kernel, rng);
  p.conv_norm = LayerNormParams<T>::create(d_model);
  p.pointwise2 = LinearParams<T>::create(d_model, d_model, rng);
  p.dropout = dropout;
  return p;
}

template <typename T>
BlockOutput<T> multiconv_block_forward(const Tensor<T>& x, const MultiConvBlockParams<T>& p,
                                       bool training, Rng& rng, bool capture_alpha) {
  auto a_hat = gelu(linear(layer_norm(x, p.pre_norm), p.up_proj));
  auto gated = mcsgu_forward(a_hat, p.mcsgu, capture_alpha);
  return {dropout(linear(gated.output, p.down_proj), p.dropout, training, rng), gated.alpha};
}

template <typename T>
Tensor<T> csgu_block_forward(const Tensor<T>& x, const CsguBlockParams<T>& p, bool training,
                             Rng& rng) {
  auto a_hat = gelu(linear(layer_norm(x, p.pre_norm), p.up_proj));
  auto gated = csgu_forward(a_hat, p.conv, p.gate_norm);
  return dropout(linear(gated, p.down_proj), p.dropout, training, rng);
}

template <typename T>
Tensor<T> conformer_conv_forward(const Tensor<T>& x, const ConformerConvParams<T>& p,
                                 bool training, Rng& rng) {
  const std::size_t d = p.pre_norm.channels();
  if (x.rank() != 2 || x.dim(1) != d) {
    throw DimensionError("conformer_conv_forward: input " + shape_str(x.shape()) +
                         " vs d_model " + std::to_string(d));
  }
  auto h = linear(layer_norm(x, p.pre_norm), p.pointwise1);
  auto [content, gate] = split_channels(h, d);
  h = mul(content, sigmoid(gate));
  h = swish(layer_norm(depthwise_conv1d(h, p.depthwise), p.conv_norm));
  return dropout(linear(h, p.pointwise2), p.dropout, training, rng);
}

#define MCF_INSTANTIATE(T)                                                                      \
  template struct McsguParams<T>;                                                              \
  template struct MultiConvBlockParams<T>;                                                     \
  template struct CsguBlockParams<T>;                                                          \
  template struct ConformerConvParams<T>;                                                      \
  template McsguOutput<T> mcsgu_forward<T>(const Tensor<T>&, const McsguParams<T>&, bool);     \
  template Tensor<T> fusion_sum<T>(const std::vector<Tensor<T>>&);                             \
  template WeightedFusion<T> fusion_weighted<T>(const std::vector<Tensor<T>>&, const Tensor<T>&, \
                                                const LinearParams<T>&);                       \
  template Tensor<T> fusion_concat<T>(const std::vector<Tensor<T>>&);                          \
  template Tensor<T> fusion_depth<T>(const std::vector<Tensor<T>>&,                            \
                                     const DepthwiseConvParams<T>&);                           \
  template Tensor<T> csgu_forward<T>(const Tensor<T>&, const DepthwiseConvParams<T>&,          \
                                     const LayerNormParams<T>&);                               \
  template BlockOutput<T> multiconv_block_forward<T>(const Tensor<T>&,                         \
                                                     const MultiConvBlockParams<T>&, bool, Rng&, \
                                                     bool);                                    \
  template Tensor<T> csgu_block_forward<T>(const Tensor<T>&, const CsguBlockParams<T>&, bool,  \
                                           Rng&);                                              \
  template Tensor<T> conformer_conv_forward<T>(const Tensor<T>&, const ConformerConvParams<T>&, \
                                               bool, Rng&);

MCF_INSTANTIATE(float)
MCF_INSTANTIATE(double)

}  // namespace mcf

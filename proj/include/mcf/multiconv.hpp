// SPDX-License-Identifier: Apache-2.0
//
// Multi-kernel convolutional spatial gating unit (M-CSGU) and the convolution
// blocks built around it.
//
// The unit splits its input Â[T, 2d'] into Z_l | Z_r, layer-normalizes Z_r,
// runs P convolutions Conv_{k_1..k_P} over it, fuses their outputs into
// Z̃_r[T, d'] and returns the gate Z_l ⊙ Z̃_r. Four fusions are provided:
//
//   Sum       Z̃_r = V_1 + ... + V_P                 (P depthwise convs over d')
//   Weighted  Z̃_r^s = Σ_i α_i^s V_i^s,
//             α^s = softmax(FFN_{d'->P}(Z_r^s))      (P depthwise convs over d')
//   Concat    Z̃_r^s = [V_1^s, ..., V_P^s]           (P grouped convs d' -> d'/P)
//   Depth     depthwise_k_f(Concat(V_1..V_P))
//
// Concat/Depth convolutions are grouped convolutions with d'/P groups of P
// contiguous input channels each: every kernel reads all d' channels and
// writes d'/P of them.
//
// With a single kernel and Sum fusion the unit is exactly the single-kernel
// CSGU of the CgConv baseline (csgu_forward), operation for operation.

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "mcf/nn.hpp"

namespace mcf {

enum class FusionKind { Sum, Weighted, Concat, Depth };

std::string to_string(FusionKind kind);
FusionKind parse_fusion(const std::string& name);

template <typename T>
struct McsguParams {
  std::size_t d_prime = 0;
  std::vector<std::size_t> kernels;
  FusionKind fusion = FusionKind::Sum;
  LayerNormParams<T> gate_norm;
  std::vector<DepthwiseConvParams<T>> depthwise;  // Sum, Weighted
  std::vector<GroupedConvParams<T>> grouped;      // Concat, Depth
  std::optional<LinearParams<T>> weighted_ffn;    // Weighted: [d', P]
  std::optional<DepthwiseConvParams<T>> final_depthwise;  // Depth

  // final_kernel == 0 selects max(kernels).
  static McsguParams create(std::size_t d_inter, std::vector<std::size_t> kernels,
                            FusionKind fusion, std::size_t final_kernel, Rng& rng);

  std::size_t num_kernels() const { return kernels.size(); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    gate_norm.visit(prefix + ".gate_norm", f);
    for (std::size_t i = 0; i < depthwise.size(); ++i)
      depthwise[i].visit(prefix + ".conv" + std::to_string(i), f);
    for (std::size_t i = 0; i < grouped.size(); ++i)
      grouped[i].visit(prefix + ".conv" + std::to_string(i), f);
    if (weighted_ffn) weighted_ffn->visit(prefix + ".weighted_ffn", f);
    if (final_depthwise) final_depthwise->visit(prefix + ".final_depthwise", f);
  }
};

template <typename T>
struct McsguOutput {
  Tensor<T> output;  // [T, d']
  Tensor<T> alpha;   // [T, P]; defined only for captured Weighted fusion
};

// Throws ContractError when capture_alpha is set for a non-Weighted unit.
template <typename T>
McsguOutput<T> mcsgu_forward(const Tensor<T>& a_hat, const McsguParams<T>& p,
                             bool capture_alpha = false);

template <typename T>
Tensor<T> fusion_sum(const std::vector<Tensor<T>>& v);

template <typename T>
struct WeightedFusion {
  Tensor<T> output;
  Tensor<T> alpha;
};
template <typename T>
WeightedFusion<T> fusion_weighted(const std::vector<Tensor<T>>& v, const Tensor<T>& z_r,
                                  const LinearParams<T>& ffn);

template <typename T>
Tensor<T> fusion_concat(const std::vector<Tensor<T>>& v);

template <typename T>
Tensor<T> fusion_depth(const std::vector<Tensor<T>>& v, const DepthwiseConvParams<T>& final_conv);

// Z_l ⊙ Conv_k(LayerNorm(Z_r)).
template <typename T>
Tensor<T> csgu_forward(const Tensor<T>& a_hat, const DepthwiseConvParams<T>& kernel,
                       const LayerNormParams<T>& norm);

// pre-norm -> up-projection d -> d_inter -> GELU -> M-CSGU -> down-projection
// d' -> d -> dropout. The residual is added by the encoder layer.
template <typename T>
struct MultiConvBlockParams {
  LayerNormParams<T> pre_norm;
  LinearParams<T> up_proj;
  McsguParams<T> mcsgu;
  LinearParams<T> down_proj;
  double dropout = 0.1;

  static MultiConvBlockParams create(std::size_t d_model, std::size_t d_inter,
                                     std::vector<std::size_t> kernels, FusionKind fusion,
                                     std::size_t final_kernel, double dropout, Rng& rng);

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    pre_norm.visit(prefix + ".pre_norm", f);
    up_proj.visit(prefix + ".up_proj", f);
    mcsgu.visit(prefix + ".mcsgu", f);
    down_proj.visit(prefix + ".down_proj", f);
  }
};

// Same block with a single-kernel CSGU (the CgConv baseline).
template <typename T>
struct CsguBlockParams {
  LayerNormParams<T> pre_norm;
  LinearParams<T> up_proj;
  LayerNormParams<T> gate_norm;
  DepthwiseConvParams<T> conv;
  LinearParams<T> down_proj;
  double dropout = 0.1;

  static CsguBlockParams create(std::size_t d_model, std::size_t d_inter, std::size_t kernel,
                                double dropout, Rng& rng);

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    pre_norm.visit(prefix + ".pre_norm", f);
    up_proj.visit(prefix + ".up_proj", f);
    gate_norm.visit(prefix + ".csgu.gate_norm", f);
    conv.visit(prefix + ".csgu.conv", f);
    down_proj.visit(prefix + ".down_proj", f);
  }
};

// Conformer convolution module: pre-norm -> pointwise d -> 2d -> GLU ->
// depthwise conv -> layer norm -> swish -> pointwise d -> d -> dropout.
template <typename T>
struct ConformerConvParams {
  LayerNormParams<T> pre_norm;
  LinearParams<T> pointwise1;
  DepthwiseConvParams<T> depthwise;
  LayerNormParams<T> conv_norm;
  LinearParams<T> pointwise2;
  double dropout = 0.1;

  static ConformerConvParams create(std::size_t d_model, std::size_t kernel, double dropout,
                                    Rng& rng);

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    pre_norm.visit(prefix + ".pre_norm", f);
    pointwise1.visit(prefix + ".pointwise1", f);
    depthwise.visit(prefix + ".depthwise", f);
    conv_norm.visit(prefix + ".conv_norm", f);
    pointwise2.visit(prefix + ".pointwise2", f);
  }
};

template <typename T>
struct BlockOutput {
  Tensor<T> output;
  Tensor<T> alpha;  // Weighted fusion only, when captured
};

template <typename T>
BlockOutput<T> multiconv_block_forward(const Tensor<T>& x, const MultiConvBlockParams<T>& p,
                                       bool training, Rng& rng, bool capture_alpha = false);
template <typename T>
Tensor<T> csgu_block_forward(const Tensor<T>& x, const CsguBlockParams<T>& p, bool training,
                             Rng& rng);
template <typename T>
Tensor<T> conformer_conv_forward(const Tensor<T>& x, const ConformerConvParams<T>& p,
                                 bool training, Rng& rng);

}  // namespace mcf

// SPDX-License-Identifier: Apache-2.0
//
// Multi-Convformer encoder: convolutional subsampling, sinusoidal positions
// and a stack of macaron layers
//
//   x <- x + 1/2 FFN1(LN(x))
//   x <- x + MHA(LN(x))
//   x <- x + ConvBlock(x)        (the block carries its own pre-norm)
//   x <- x + 1/2 FFN2(LN(x))
//   x <- LN(x)
//
// ConvBlock is the multi-kernel gated block, the single-kernel CSGU block
// (CgConv baseline) or the Conformer convolution module. A linear CTC head
// maps encoder states to V + 1 logits (blank = 0).

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mcf/attention.hpp"
#include "mcf/multiconv.hpp"
#include "mcf/nn.hpp"

namespace mcf {

enum class ConvBlockKind { MultiConv, Csgu, Conformer };

std::string to_string(ConvBlockKind kind);
ConvBlockKind parse_conv_block(const std::string& name);

struct EncoderConfig {
  std::size_t num_layers = 12;
  std::size_t d_model = 256;
  std::size_t heads = 4;
  std::size_t d_inter = 0;  // 0 selects 6 * d_model
  std::size_t d_ffn = 0;    // 0 selects 4 * d_model
  std::vector<std::size_t> kernels{7, 15, 23, 31};
  FusionKind fusion = FusionKind::Depth;
  ConvBlockKind conv_block = ConvBlockKind::MultiConv;
  std::size_t final_kernel = 0;     // depth fusion trailing kernel; 0 selects max(kernels)
  std::size_t baseline_kernel = 0;  // CSGU / Conformer kernel; 0 selects max(kernels)
  double dropout = 0.1;
  std::uint64_t seed = 0;
  std::size_t feature_dim = 80;
  std::size_t vocab_size = 8;  // tokens 1..V, blank 0

  std::size_t inter_dim() const { return d_inter ? d_inter : 6 * d_model; }
  std::size_t ffn_dim() const { return d_ffn ? d_ffn : 4 * d_model; }
  std::size_t gate_dim() const { return inter_dim() / 2; }
  std::size_t final_kernel_size() const { return final_kernel ? final_kernel : max_kernel(); }
  std::size_t baseline_kernel_size() const { return baseline_kernel ? baseline_kernel : max_kernel(); }
  std::size_t max_kernel() const { return kernels.empty() ? 0 : kernels.back(); }

  // Throws ConfigError on the first violated constraint.
  void validate() const;

  bool operator==(const EncoderConfig&) const = default;
};

template <typename T>
struct FfnParams {
  LayerNormParams<T> norm;
  LinearParams<T> up;
  LinearParams<T> down;

  static FfnParams create(std::size_t d_model, std::size_t d_ffn, Rng& rng);

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    norm.visit(prefix + ".norm", f);
    up.visit(prefix + ".up", f);
    down.visit(prefix + ".down", f);
  }
};

template <typename T>
using ConvBlockParams =
    std::variant<MultiConvBlockParams<T>, CsguBlockParams<T>, ConformerConvParams<T>>;

template <typename T>
struct EncoderLayerParams {
  FfnParams<T> ffn1;
  LayerNormParams<T> mha_norm;
  MhaParams<T> mha;
  ConvBlockParams<T> conv;
  FfnParams<T> ffn2;
  LayerNormParams<T> final_norm;
  double dropout = 0.1;

  static EncoderLayerParams create(const EncoderConfig& cfg, Rng& rng);

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    ffn1.visit(prefix + ".ffn1", f);
    mha_norm.visit(prefix + ".mha_norm", f);
    mha.visit(prefix + ".mha", f);
    std::visit([&](auto& block) { block.visit(prefix + ".conv", f); }, conv);
    ffn2.visit(prefix + ".ffn2", f);
    final_norm.visit(prefix + ".final_norm", f);
  }
};

template <typename T>
struct EncoderParams {
  EncoderConfig config;
  SubsamplerParams<T> subsampler;
  std::vector<EncoderLayerParams<T>> layers;
  LinearParams<T> ctc_head;  // [d, V + 1]

  // Deterministic initialization from config.seed.
  static EncoderParams create(const EncoderConfig& cfg);

  template <class F>
  void visit(F&& f) {
    subsampler.visit("subsampler", f);
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit("layers." + std::to_string(i), f);
    ctc_head.visit("ctc_head", f);
  }
};

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> named_parameters(EncoderParams<T>& params);

// Copies every parameter value of src into dst; names and shapes must match.
template <typename T>
void copy_parameters(EncoderParams<T>& src, EncoderParams<T>& dst);

// Values captured during a forward pass for analysis.
template <typename T>
struct EncoderCaptures {
  std::vector<AttentionMap> attention;  // num_layers * heads maps
  std::vector<Tensor<T>> alphas;        // per layer [T, P]; Weighted fusion only
};

struct ForwardOptions {
  bool training = false;
  bool capture = false;
};

template <typename T>
Tensor<T> encoder_layer_forward(const Tensor<T>& x, const EncoderLayerParams<T>& p,
                                std::size_t layer_index, const ForwardOptions& opts, Rng& rng,
                                EncoderCaptures<T>* captures = nullptr);

template <typename T>
struct EncoderOutput {
  Tensor<T> hidden;  // H [T, d]
  EncoderCaptures<T> captures;
};

template <typename T>
EncoderOutput<T> encoder_forward(const Tensor<T>& features, const EncoderParams<T>& params,
                                 const ForwardOptions& opts, Rng& rng);

template <typename T>
Tensor<T> ctc_logits(const Tensor<T>& hidden, const EncoderParams<T>& params);

// Exact learnable scalar counts.
struct ParamCount {
  std::vector<std::pair<std::string, std::size_t>> blocks;
  std::size_t total = 0;

  std::size_t block(const std::string& name) const;
  // Sum over blocks whose name ends with `suffix` (e.g. ".conv").
  std::size_t sum_matching(const std::string& suffix) const;
};

template <class P>
std::size_t count_params(P& params) {
  std::size_t n = 0;
  params.visit("", [&](const std::string&, const auto& t) { n += t.numel(); });
  return n;
}

// Blocks: subsampler, layers.<i>.{ffn1,mha_norm,mha,conv,ffn2,final_norm}, ctc_head.
template <typename T>
ParamCount param_count(EncoderParams<T>& params);

// ---- checkpoints ----------------------------------------------------------
//
// Little-endian layout:
//   "MCFK" | u32 version | u32 element bytes (4 or 8) | u32 entry count
//   entries: u32 name length | name | u32 rank | u64 dims[rank] | u64 payload offset
//   payload: raw IEEE-754 values, entries concatenated in manifest order

inline constexpr std::uint32_t checkpoint_version = 1;

template <typename T>
void save_checkpoint(const std::filesystem::path& path, EncoderParams<T>& params);
// Loads into an already constructed model; names, shapes and element width must match.
template <typename T>
void load_checkpoint(const std::filesystem::path& path, EncoderParams<T>& params);

struct CheckpointInfo {
  std::uint32_t version = 0;
  std::uint32_t element_bytes = 0;
  std::vector<std::pair<std::string, Shape>> entries;
};
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

}  // namespace mcf

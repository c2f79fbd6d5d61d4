// SPDX-License-Identifier: Apache-2.0

#include "mcf/encoder.hpp"

#include <algorithm>
#include <map>

namespace mcf {

std::string to_string(ConvBlockKind kind) {
  switch (kind) {
    case ConvBlockKind::MultiConv:
      return "multiconv";
    case ConvBlockKind::Csgu:
      return "csgu";
    case ConvBlockKind::Conformer:
      return "conformer";
  }
  return "?";
}

ConvBlockKind parse_conv_block(const std::string& name) {
  if (name == "multiconv") return ConvBlockKind::MultiConv;
  if (name == "csgu") return ConvBlockKind::Csgu;
  if (name == "conformer") return ConvBlockKind::Conformer;
  throw ConfigError("unknown conv block '" + name + "' (expected multiconv, csgu or conformer)");
}

void EncoderConfig::validate() const {
  const auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (num_layers == 0) fail("num_layers must be positive");
  if (d_model == 0) fail("d_model must be positive");
  if (heads == 0 || d_model % heads != 0) {
    fail(std::to_string(heads) + " heads do not divide d_model " + std::to_string(d_model));
  }
  if (inter_dim() % 2 != 0) fail("d_inter must be even, got " + std::to_string(inter_dim()));
  if (kernels.empty()) fail("kernel set must not be empty");
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    if (kernels[i] % 2 == 0) fail("kernel sizes must be odd, got " + std::to_string(kernels[i]));
    if (i > 0 && kernels[i] <= kernels[i - 1]) fail("kernel sizes must be strictly increasing");
  }
  if (final_kernel % 2 == 0 && final_kernel != 0) fail("final kernel size must be odd");
  if (baseline_kernel % 2 == 0 && baseline_kernel != 0) fail("baseline kernel size must be odd");
  if (conv_block == ConvBlockKind::MultiConv &&
      (fusion == FusionKind::Concat || fusion == FusionKind::Depth) &&
      gate_dim() % kernels.size() != 0) {
    fail(std::to_string(kernels.size()) + " kernels do not divide d' = " + std::to_string(gate_dim()));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (subsampled_length(feature_dim) == 0) fail("feature_dim is too small for subsampling");
  if (vocab_size == 0) fail("vocab_size must be positive");
}

template <typename T>
FfnParams<T> FfnParams<T>::create(std::size_t d_model, std::size_t d_ffn, Rng& rng) {
  FfnParams p;
  p.norm = LayerNormParams<T>::create(d_model);
  p.up = LinearParams<T>::create(d_model, d_ffn, rng);
  p.down = LinearParams<T>::create(d_ffn, d_model, rng);
  return p;
}

template <typename T>
EncoderLayerParams<T> EncoderLayerParams<T>::create(const EncoderConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.d_model;
  EncoderLayerParams p;
  p.dropout = cfg.dropout;
  p.ffn1 = FfnParams<T>::create(d, cfg.ffn_dim(), rng);
  p.mha_norm = LayerNormParams<T>::create(d);
  p.mha = MhaParams<T>::create(d, cfg.heads, rng);
  switch (cfg.conv_block) {
    case ConvBlockKind::MultiConv:
      p.conv = MultiConvBlockParams<T>::create(d, cfg.inter_dim(), cfg.kernels, cfg.fusion,
                                               cfg.final_kernel_size(), cfg.dropout, rng);
      break;
    case ConvBlockKind::Csgu:
      p.conv = CsguBlockParams<T>::create(d, cfg.inter_dim(), cfg.baseline_kernel_size(),
                                          cfg.dropout, rng);
      break;
    case ConvBlockKind::Conformer:
      p.conv = ConformerConvParams<T>::create(d, cfg.baseline_kernel_size(), cfg.dropout, rng);
      break;
  }
  p.ffn2 = FfnParams<T>::create(d, cfg.ffn_dim(), rng);
  p.final_norm = LayerNormParams<T>::create(d);
  return p;
}

template <typename T>
EncoderParams<T> EncoderParams<T>::create(const EncoderConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  EncoderParams p;
  p.config = cfg;
  p.subsampler = SubsamplerParams<T>::create(cfg.feature_dim, cfg.d_model, rng);
  for (std::size_t i = 0; i < cfg.num_layers; ++i)
    p.layers.push_back(EncoderLayerParams<T>::create(cfg, rng));
  p.ctc_head = LinearParams<T>::create(cfg.d_model, cfg.vocab_size + 1, rng);
  return p;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> named_parameters(EncoderParams<T>& params) {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  params.visit([&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, t); });
  return out;
}

template <typename T>
void copy_parameters(EncoderParams<T>& src, EncoderParams<T>& dst) {
  auto a = named_parameters(src);
  auto b = named_parameters(dst);
  if (a.size() != b.size()) throw ContractError("copy_parameters: parameter sets differ in size");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first || a[i].second.shape() != b[i].second.shape()) {
      throw ContractError("copy_parameters: '" + a[i].first + "' " + shape_str(a[i].second.shape()) +
                          " vs '" + b[i].first + "' " + shape_str(b[i].second.shape()));
    }
    std::copy(a[i].second.data().begin(), a[i].second.data().end(), b[i].second.data().begin());
  }
}

namespace {

template <typename T>
Tensor<T> ffn_forward(const Tensor<T>& x, const FfnParams<T>& p, double rate, bool training,
                      Rng& rng) {
  auto h = dropout(gelu(linear(layer_norm(x, p.norm), p.up)), rate, training, rng);
  return dropout(linear(h, p.down), rate, training, rng);
}

}  // namespace

template <typename T>
Tensor<T> encoder_layer_forward(const Tensor<T>& x, const EncoderLayerParams<T>& p,
                                std::size_t layer_index, const ForwardOptions& opts, Rng& rng,
                                EncoderCaptures<T>* captures) {
  if (x.rank() != 2 || x.dim(1) != p.mha.d_model()) {
    throw DimensionError("encoder layer: input " + shape_str(x.shape()) + " vs d_model " +
                         std::to_string(p.mha.d_model()));
  }
  const bool capture = opts.capture && captures != nullptr;
  auto h = add(x, scale(ffn_forward(x, p.ffn1, p.dropout, opts.training, rng), T(0.5)));

  auto att = mha_forward(layer_norm(h, p.mha_norm), p.mha, capture, layer_index);
  h = add(h, dropout(att.output, p.dropout, opts.training, rng));
  if (capture) {
    for (auto& m : att.maps) captures->attention.push_back(std::move(m));
  }

  Tensor<T> conv_out = std::visit(
      [&](const auto& block) -> Tensor<T> {
        using B = std::decay_t<decltype(block)>;
        if constexpr (std::is_same_v<B, MultiConvBlockParams<T>>) {
          const bool want_alpha = capture && block.mcsgu.fusion == FusionKind::Weighted;
          auto out = multiconv_block_forward(h, block, opts.training, rng, want_alpha);
          if (want_alpha) captures->alphas.push_back(out.alpha);
          return out.output;
        } else if constexpr (std::is_same_v<B, CsguBlockParams<T>>) {
          return csgu_block_forward(h, block, opts.training, rng);
        } else {
          return conformer_conv_forward(h, block, opts.training, rng);
        }
      },
      p.conv);
  h = add(h, conv_out);

  h = add(h, scale(ffn_forward(h, p.ffn2, p.dropout, opts.training, rng), T(0.5)));
  return layer_norm(h, p.final_norm);
}

template <typename T>
EncoderOutput<T> encoder_forward(const Tensor<T>& features, const EncoderParams<T>& params,
                                 const ForwardOptions& opts, Rng& rng) {
  const auto& cfg = params.config;
  if (features.rank() != 2 || features.dim(1) != cfg.feature_dim) {
    throw DimensionError("encoder input must be [L," + std::to_string(cfg.feature_dim) + "], got " +
                         shape_str(features.shape()));
  }
  EncoderOutput<T> out;
  auto h = subsample(features, params.subsampler);
  h = add(h, sinusoidal_positions<T>(h.dim(0), cfg.d_model));
  for (std::size_t i = 0; i < params.layers.size(); ++i)
    h = encoder_layer_forward(h, params.layers[i], i, opts, rng, &out.captures);
  out.hidden = h;
  return out;
}

template <typename T>
Tensor<T> ctc_logits(const Tensor<T>& hidden, const EncoderParams<T>& params) {
  return linear(hidden, params.ctc_head);
}

std::size_t ParamCount::block(const std::string& name) const {
  for (const auto& [n, c] : blocks)
    if (n == name) return c;
  throw ContractError("no parameter block named '" + name + "'");
}

std::size_t ParamCount::sum_matching(const std::string& suffix) const {
  std::size_t n = 0;
  for (const auto& [name, c] : blocks)
    if (name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      n += c;
  return n;
}

template <typename T>
ParamCount param_count(EncoderParams<T>& params) {
  ParamCount pc;
  params.visit([&](const std::string& name, const Tensor<T>& t) {
    // Block key: first component, or layers.<i>.<sublayer> inside the stack.
    std::string key;
    std::size_t pos = name.find('.');
    if (name.rfind("layers.", 0) == 0) {
      pos = name.find('.', name.find('.', pos + 1) + 1);
    }
    key = name.substr(0, pos);
    if (pc.blocks.empty() || pc.blocks.back().first != key) pc.blocks.emplace_back(key, 0);
    pc.blocks.back().second += t.numel();
    pc.total += t.numel();
  });
  return pc;
}

#define MCF_INSTANTIATE(T)                                                                        \
  template struct FfnParams<T>;                                                                  \
  template struct EncoderLayerParams<T>;                                                         \
  template struct EncoderParams<T>;                                                              \
  template std::vector<std::pair<std::string, Tensor<T>>> named_parameters<T>(EncoderParams<T>&); \
  template void copy_parameters<T>(EncoderParams<T>&, EncoderParams<T>&);                        \
  template Tensor<T> encoder_layer_forward<T>(const Tensor<T>&, const EncoderLayerParams<T>&,    \
                                              std::size_t, const ForwardOptions&, Rng&,          \
                                              EncoderCaptures<T>*);                              \
  template EncoderOutput<T> encoder_forward<T>(const Tensor<T>&, const EncoderParams<T>&,        \
                                               const ForwardOptions&, Rng&);                     \
  template Tensor<T> ctc_logits<T>(const Tensor<T>&, const EncoderParams<T>&);                   \
  template ParamCount param_count<T>(EncoderParams<T>&);

MCF_INSTANTIATE(float)
MCF_INSTANTIATE(double)

}  // namespace mcf

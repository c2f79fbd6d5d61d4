// SPDX-License-Identifier: Apache-2.0

#include "mcf/analysis.hpp"

#include <cmath>
#include <iomanip>

namespace mcf {

double diagonality(const AttentionMap& w) {
  const std::size_t n = w.frames;
  if (n == 0 || w.weights.size() != n * n) {
    throw DimensionError("attention map must be square with T >= 1");
  }
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (w.at(i, j) < 0.0) throw ContractError("attention weights must be non-negative");
      row += w.at(i, j);
    }
    if (std::abs(row - 1.0) > 1e-6) {
      throw ContractError("attention row " + std::to_string(i) + " sums to " + std::to_string(row));
    }
  }
  if (n == 1) return 1.0;
  double offset = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      offset += w.at(i, j) * static_cast<double>(i > j ? i - j : j - i);
  return 1.0 - offset / (static_cast<double>(n) * static_cast<double>(n - 1));
}

DiagonalityReport aggregate_diagonality(const std::vector<std::vector<AttentionMap>>& maps_per_utterance,
                                        std::size_t num_layers) {
  if (maps_per_utterance.empty()) throw InputError("diagonality report needs at least one utterance");
  DiagonalityReport report;
  report.per_layer.assign(num_layers, 0.0);
  for (const auto& maps : maps_per_utterance) {
    std::vector<double> layer_sum(num_layers, 0.0);
    std::vector<std::size_t> layer_heads(num_layers, 0);
    for (const auto& m : maps) {
      if (m.layer >= num_layers) throw IndexError("attention map layer out of range");
      layer_sum[m.layer] += diagonality(m);
      ++layer_heads[m.layer];
    }
    for (std::size_t l = 0; l < num_layers; ++l) {
      if (layer_heads[l] == 0) throw InputError("no attention maps captured for layer " + std::to_string(l));
      report.per_layer[l] += layer_sum[l] / static_cast<double>(layer_heads[l]);
    }
  }
  double total = 0;
  for (auto& v : report.per_layer) {
    v /= static_cast<double>(maps_per_utterance.size());
    total += v;
  }
  report.average = total / static_cast<double>(num_layers);
  return report;
}

template <typename T>
DiagonalityReport diagonality_report(const EncoderParams<T>& model,
                                     const std::vector<Tensor<T>>& utterances) {
  if (utterances.empty()) throw InputError("diagonality report needs at least one utterance");
  std::vector<std::vector<AttentionMap>> maps;
  Rng rng(0);
  for (const auto& x : utterances) {
    auto out = encoder_forward(x, model, ForwardOptions{false, true}, rng);
    maps.push_back(std::move(out.captures.attention));
  }
  return aggregate_diagonality(maps, model.config.num_layers);
}

template <typename T>
KernelImportanceMatrix kernel_importance(const EncoderParams<T>& model,
                                         const std::vector<Tensor<T>>& utterances) {
  const auto& cfg = model.config;
  if (cfg.conv_block != ConvBlockKind::MultiConv || cfg.fusion != FusionKind::Weighted) {
    throw ContractError("kernel importance needs a multiconv model with weighted fusion, got " +
                        to_string(cfg.conv_block) + "/" + to_string(cfg.fusion));
  }
  if (utterances.empty()) throw InputError("kernel importance needs at least one utterance");
  const std::size_t layers = cfg.num_layers, kernels = cfg.kernels.size();
  KernelImportanceMatrix m{cfg.kernels, std::vector<std::vector<double>>(layers, std::vector<double>(kernels, 0.0))};
  std::size_t frames = 0;
  Rng rng(0);
  for (const auto& x : utterances) {
    auto out = encoder_forward(x, model, ForwardOptions{false, true}, rng);
    const auto& alphas = out.captures.alphas;
    if (alphas.size() != layers) throw StateError("expected one alpha capture per layer");
    for (std::size_t l = 0; l < layers; ++l) {
      const auto& a = alphas[l];
      for (std::size_t t = 0; t < a.dim(0); ++t)
        for (std::size_t k = 0; k < kernels; ++k) m.rows[l][k] += static_cast<double>(a.at(t, k));
    }
    frames += out.hidden.dim(0);
  }
  for (auto& row : m.rows)
    for (auto& v : row) v /= static_cast<double>(frames);
  return m;
}

void write_diagonality_csv(std::ostream& os, const DiagonalityReport& report) {
  os << "layer,value\n" << std::setprecision(17);
  for (std::size_t l = 0; l < report.per_layer.size(); ++l) os << l << ',' << report.per_layer[l] << '\n';
}

void write_importance_csv(std::ostream& os, const KernelImportanceMatrix& matrix) {
  os << "layer";
  for (auto k : matrix.kernels) os << ",k" << k;
  os << '\n' << std::setprecision(17);
  for (std::size_t l = 0; l < matrix.rows.size(); ++l) {
    os << l;
    for (double v : matrix.rows[l]) os << ',' << v;
    os << '\n';
  }
}

// ---- closed-form parameter accounting -------------------------------------

namespace {

std::size_t lin(std::size_t in, std::size_t out) { return in * out + out; }
std::size_t norm(std::size_t c) { return 2 * c; }
std::size_t dw(std::size_t c, std::size_t k) { return c * k + c; }

}  // namespace

std::size_t closed_form_fusion_params(std::size_t d_prime, const std::vector<std::size_t>& kernels,
                                      FusionKind fusion, std::size_t final_kernel) {
  const std::size_t p = kernels.size();
  std::size_t n = 0;
  switch (fusion) {
    case FusionKind::Sum:
    case FusionKind::Weighted:
      for (auto k : kernels) n += d_prime * k + d_prime;
      if (fusion == FusionKind::Weighted) n += d_prime * p + p;
      break;
    case FusionKind::Concat:
    case FusionKind::Depth:
      // Each grouped conv: d'/P groups of P inputs, k taps, one bias per group.
      for (auto k : kernels) n += (d_prime / p) * p * k + d_prime / p;
      if (fusion == FusionKind::Depth) n += d_prime * final_kernel + d_prime;
      break;
  }
  return n;
}

ParamCount closed_form_param_count(const EncoderConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model, f = cfg.ffn_dim(), di = cfg.inter_dim(), dp = di / 2;
  const std::size_t reduced = subsampled_length(cfg.feature_dim);
  ParamCount pc;
  const auto push = [&](std::string name, std::size_t n) {
    pc.blocks.emplace_back(std::move(name), n);
    pc.total += n;
  };
  push("subsampler", (d * 9 + d) + (d * d * 9 + d) + lin(d * reduced, d));
  for (std::size_t i = 0; i < cfg.num_layers; ++i) {
    const std::string pre = "layers." + std::to_string(i) + ".";
    const std::size_t ffn = norm(d) + lin(d, f) + lin(f, d);
    push(pre + "ffn1", ffn);
    push(pre + "mha_norm", norm(d));
    push(pre + "mha", 4 * lin(d, d));
    std::size_t conv = 0;
    switch (cfg.conv_block) {
      case ConvBlockKind::MultiConv:
        conv = norm(d) + lin(d, di) + norm(dp) +
               closed_form_fusion_params(dp, cfg.kernels, cfg.fusion, cfg.final_kernel_size()) +
               lin(dp, d);
        break;
      case ConvBlockKind::Csgu:
        conv = norm(d) + lin(d, di) + norm(dp) + dw(dp, cfg.baseline_kernel_size()) + lin(dp, d);
        break;
      case ConvBlockKind::Conformer:
        conv = norm(d) + lin(d, 2 * d) + dw(d, cfg.baseline_kernel_size()) + norm(d) + lin(d, d);
        break;
    }
    push(pre + "conv", conv);
    push(pre + "ffn2", ffn);
    push(pre + "final_norm", norm(d));
  }
  push("ctc_head", lin(d, cfg.vocab_size + 1));
  return pc;
}

namespace {

bool same_except_fusion(EncoderConfig a, EncoderConfig b) {
  a.fusion = b.fusion;
  a.seed = b.seed;
  return a == b;
}

}  // namespace

void verify_param_count(const std::string& name, const ParamCount& measured, const EncoderConfig& cfg) {
  const auto expected = closed_form_param_count(cfg);
  if (measured.blocks.size() != expected.blocks.size()) {
    throw IntegrityError(name + ": " + std::to_string(measured.blocks.size()) + " blocks measured, closed form has " +
                         std::to_string(expected.blocks.size()));
  }
  for (std::size_t i = 0; i < measured.blocks.size(); ++i) {
    const auto& [mname, mcount] = measured.blocks[i];
    const auto& [ename, ecount] = expected.blocks[i];
    if (mname != ename || mcount != ecount) {
      throw IntegrityError(name + ": block '" + mname + "' has " + std::to_string(mcount) +
                           " parameters, closed form for '" + ename + "' gives " + std::to_string(ecount));
    }
  }
}

std::vector<ParamReportRow> param_report(
    const std::vector<std::pair<std::string, EncoderConfig>>& variants) {
  std::vector<ParamReportRow> rows;
  for (const auto& [name, cfg] : variants) {
    auto model = EncoderParams<float>::create(cfg);
    const auto measured = param_count(model);
    verify_param_count(name, measured, cfg);
    ParamReportRow row;
    row.name = name;
    row.config = cfg;
    row.total = measured.total;
    rows.push_back(std::move(row));
  }
  for (auto& row : rows) {
    row.delta_vs_first = static_cast<long long>(row.total) - static_cast<long long>(rows.front().total);
    const auto& cfg = row.config;
    if (cfg.conv_block != ConvBlockKind::MultiConv) continue;
    FusionKind partner_kind;
    if (cfg.fusion == FusionKind::Weighted) {
      partner_kind = FusionKind::Sum;
    } else if (cfg.fusion == FusionKind::Depth) {
      partner_kind = FusionKind::Concat;
    } else {
      continue;
    }
    for (const auto& other : rows) {
      if (other.config.fusion != partner_kind || !same_except_fusion(cfg, other.config)) continue;
      const std::size_t dp = cfg.gate_dim();
      const long long per_layer =
          static_cast<long long>(closed_form_fusion_params(dp, cfg.kernels, cfg.fusion, cfg.final_kernel_size())) -
          static_cast<long long>(closed_form_fusion_params(dp, cfg.kernels, partner_kind, cfg.final_kernel_size()));
      row.partner = other.name;
      row.measured_delta = static_cast<long long>(row.total) - static_cast<long long>(other.total);
      row.formula_delta = static_cast<long long>(cfg.num_layers) * per_layer;
      if (row.measured_delta != row.formula_delta) {
        throw IntegrityError(row.name + " - " + other.name + ": measured delta " +
                             std::to_string(row.measured_delta) + " != closed form " +
                             std::to_string(row.formula_delta));
      }
      break;
    }
  }
  return rows;
}

void write_param_report(std::ostream& os, const std::vector<ParamReportRow>& rows) {
  os << std::left << std::setw(20) << "variant" << std::right << std::setw(14) << "params"
     << std::setw(14) << "delta" << "  check\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(20) << r.name << std::right << std::setw(14) << r.total
       << std::setw(14) << r.delta_vs_first;
    if (r.partner) {
      os << "  vs " << *r.partner << ": " << r.measured_delta << " == closed form " << r.formula_delta;
    }
    os << '\n';
  }
}

template DiagonalityReport diagonality_report<float>(const EncoderParams<float>&,
                                                     const std::vector<Tensor<float>>&);
template DiagonalityReport diagonality_report<double>(const EncoderParams<double>&,
                                                      const std::vector<Tensor<double>>&);
template KernelImportanceMatrix kernel_importance<float>(const EncoderParams<float>&,
                                                         const std::vector<Tensor<float>>&);
template KernelImportanceMatrix kernel_importance<double>(const EncoderParams<double>&,
                                                          const std::vector<Tensor<double>>&);

}  // namespace mcf

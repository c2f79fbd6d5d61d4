// SPDX-License-Identifier: Apache-2.0
//
// Diagnostics over trained encoders: attention diagonality per layer,
// per-layer kernel importance of weighted fusion, and parameter accounting
// checked against closed-form block formulas.

#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "mcf/encoder.hpp"

namespace mcf {

// D(w) = 1 - sum_ij w[i,j] |i - j| / (T (T - 1)); 1.0 when T == 1.
double diagonality(const AttentionMap& w);

struct DiagonalityReport {
  std::vector<double> per_layer;  // mean over heads, then over utterances
  double average = 0.0;           // mean over layers
};

// maps_per_utterance[u] holds every captured map of utterance u.
DiagonalityReport aggregate_diagonality(const std::vector<std::vector<AttentionMap>>& maps_per_utterance,
                                        std::size_t num_layers);

template <typename T>
DiagonalityReport diagonality_report(const EncoderParams<T>& model,
                                     const std::vector<Tensor<T>>& utterances);

struct KernelImportanceMatrix {
  std::vector<std::size_t> kernels;
  std::vector<std::vector<double>> rows;  // [num_layers][P], mean alpha over all frames
};

// Requires weighted fusion in every layer.
template <typename T>
KernelImportanceMatrix kernel_importance(const EncoderParams<T>& model,
                                         const std::vector<Tensor<T>>& utterances);

void write_diagonality_csv(std::ostream& os, const DiagonalityReport& report);
void write_importance_csv(std::ostream& os, const KernelImportanceMatrix& matrix);

// Closed-form parameter counts for the blocks reported by param_count().
ParamCount closed_form_param_count(const EncoderConfig& cfg);

// Fusion-dependent part of one layer's gating unit convolutions.
std::size_t closed_form_fusion_params(std::size_t d_prime, const std::vector<std::size_t>& kernels,
                                      FusionKind fusion, std::size_t final_kernel);

// Compares a measured count block by block with the closed form for `cfg`.
// Throws IntegrityError naming the first mismatching block.
void verify_param_count(const std::string& name, const ParamCount& measured, const EncoderConfig& cfg);

struct ParamReportRow {
  std::string name;
  EncoderConfig config;
  std::size_t total = 0;
  long long delta_vs_first = 0;
  // Set when the row has a fusion partner (weighted vs sum, depth vs concat)
  // in the report with an otherwise identical config.
  std::optional<std::string> partner;
  long long measured_delta = 0;
  long long formula_delta = 0;
};

// Builds each variant, counts its parameters and checks every block against
// the closed form. Throws IntegrityError naming the first mismatching block.
std::vector<ParamReportRow> param_report(
    const std::vector<std::pair<std::string, EncoderConfig>>& variants);

void write_param_report(std::ostream& os, const std::vector<ParamReportRow>& rows);

}  // namespace mcf

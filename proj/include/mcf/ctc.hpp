// SPDX-License-Identifier: Apache-2.0
//
// Connectionist temporal classification: loss via the log-space forward
// recursion, gradient via forward-backward posteriors, best-path decoding and
// token error accounting. Blank is symbol 0; tokens are 1..V.

#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "mcf/tensor.hpp"

namespace mcf {

inline constexpr int ctc_blank = 0;

// Per-frame log-probabilities over V + 1 symbols, row-major [frames, symbols].
struct LogProbLattice {
  std::size_t frames = 0;
  std::size_t symbols = 0;
  std::vector<double> log_probs;

  // Applies a per-frame log-softmax to raw logits.
  static LogProbLattice from_logits(std::span<const double> logits, std::size_t frames,
                                    std::size_t symbols);
  template <typename T>
  static LogProbLattice from_logits(const Tensor<T>& logits);

  double at(std::size_t t, std::size_t k) const { return log_probs[t * symbols + k]; }
};

// Minimum frames for an alignment: M plus one per adjacent repeated pair.
std::size_t ctc_min_frames(std::span<const int> target);

// -log p(target | lattice) by the forward recursion; +inf when infeasible.
double ctc_neg_log_likelihood(const LogProbLattice& lattice, std::span<const int> target);

template <typename T>
struct CtcResult {
  Tensor<T> loss;  // scalar
  bool feasible = true;
};

// Differentiable with respect to the raw logits [T, V + 1]. Infeasible targets
// yield an infinite loss with feasible == false and record nothing.
template <typename T>
CtcResult<T> ctc_loss(const Tensor<T>& logits, std::span<const int> target);

// Per-frame argmax (ties to the lowest id), merge repeats, drop blanks.
std::vector<int> ctc_greedy_decode(const LogProbLattice& lattice);

struct EditStats {
  std::size_t distance = 0;
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
};

EditStats edit_distance(std::span<const int> hyp, std::span<const int> ref);

// distance / |ref|; +inf for an empty reference with a nonempty hypothesis.
double token_error_rate(const EditStats& stats, std::size_t ref_length);

}  // namespace mcf

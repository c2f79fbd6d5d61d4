// SPDX-License-Identifier: Apache-2.0

#include "mcf/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace mcf {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// Blank-interleaved label sequence: 0 y1 0 y2 ... yM 0.
std::vector<int> extend(std::span<const int> target) {
  std::vector<int> ext(2 * target.size() + 1, ctc_blank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  return ext;
}

void check_target(std::span<const int> target, std::size_t symbols) {
  if (target.empty()) throw ContractError("CTC target must contain at least one token");
  for (int y : target) {
    if (y < 1 || static_cast<std::size_t>(y) >= symbols) {
      throw ContractError("CTC token " + std::to_string(y) + " outside [1, " +
                          std::to_string(symbols - 1) + "]");
    }
  }
}

bool can_skip(const std::vector<int>& ext, std::size_t s) {
  return s >= 2 && ext[s] != ctc_blank && ext[s] != ext[s - 2];
}

// alpha[t * S + s] = log prob of frames 0..t ending in extended state s.
std::vector<double> forward_table(const LogProbLattice& lat, const std::vector<int>& ext) {
  const std::size_t frames = lat.frames, states = ext.size();
  std::vector<double> alpha(frames * states, kNegInf);
  alpha[0] = lat.at(0, ext[0]);
  if (states > 1) alpha[1] = lat.at(0, ext[1]);
  for (std::size_t t = 1; t < frames; ++t) {
    const double* prev = alpha.data() + (t - 1) * states;
    double* cur = alpha.data() + t * states;
    for (std::size_t s = 0; s < states; ++s) {
      double acc = prev[s];
      if (s >= 1) acc = log_add(acc, prev[s - 1]);
      if (can_skip(ext, s)) acc = log_add(acc, prev[s - 2]);
      cur[s] = acc == kNegInf ? kNegInf : acc + lat.at(t, ext[s]);
    }
  }
  return alpha;
}

// beta[t * S + s] = log prob of frames t+1..T-1 given state s at frame t.
std::vector<double> backward_table(const LogProbLattice& lat, const std::vector<int>& ext) {
  const std::size_t frames = lat.frames, states = ext.size();
  std::vector<double> beta(frames * states, kNegInf);
  double* last = beta.data() + (frames - 1) * states;
  last[states - 1] = 0.0;
  if (states > 1) last[states - 2] = 0.0;
  for (std::size_t t = frames - 1; t-- > 0;) {
    const double* next = beta.data() + (t + 1) * states;
    double* cur = beta.data() + t * states;
    for (std::size_t s = 0; s < states; ++s) {
      double acc = next[s] == kNegInf ? kNegInf : next[s] + lat.at(t + 1, ext[s]);
      if (s + 1 < states && next[s + 1] != kNegInf)
        acc = log_add(acc, next[s + 1] + lat.at(t + 1, ext[s + 1]));
      if (s + 2 < states && can_skip(ext, s + 2) && next[s + 2] != kNegInf)
        acc = log_add(acc, next[s + 2] + lat.at(t + 1, ext[s + 2]));
      cur[s] = acc;
    }
  }
  return beta;
}

double total_log_prob(const std::vector<double>& alpha, std::size_t frames, std::size_t states) {
  const double* last = alpha.data() + (frames - 1) * states;
  return states > 1 ? log_add(last[states - 1], last[states - 2]) : last[0];
}

}  // namespace

LogProbLattice LogProbLattice::from_logits(std::span<const double> logits, std::size_t frames,
                                           std::size_t symbols) {
  if (logits.size() != frames * symbols) {
    throw DimensionError("lattice logits hold " + std::to_string(logits.size()) + " values, expected " +
                         std::to_string(frames * symbols));
  }
  LogProbLattice lat{frames, symbols, std::vector<double>(frames * symbols)};
  for (std::size_t t = 0; t < frames; ++t) {
    const double* row = logits.data() + t * symbols;
    const double mx = *std::max_element(row, row + symbols);
    double z = 0;
    for (std::size_t k = 0; k < symbols; ++k) z += std::exp(row[k] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t k = 0; k < symbols; ++k) lat.log_probs[t * symbols + k] = row[k] - lse;
  }
  return lat;
}

template <typename T>
LogProbLattice LogProbLattice::from_logits(const Tensor<T>& logits) {
  if (logits.rank() != 2) {
    throw DimensionError("lattice logits must be [T, V+1], got " + shape_str(logits.shape()));
  }
  std::vector<double> values(logits.data().begin(), logits.data().end());
  return from_logits(values, logits.dim(0), logits.dim(1));
}

std::size_t ctc_min_frames(std::span<const int> target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return n;
}

double ctc_neg_log_likelihood(const LogProbLattice& lattice, std::span<const int> target) {
  check_target(target, lattice.symbols);
  if (lattice.frames < ctc_min_frames(target)) return std::numeric_limits<double>::infinity();
  const auto ext = extend(target);
  const auto alpha = forward_table(lattice, ext);
  return -total_log_prob(alpha, lattice.frames, ext.size());
}

template <typename T>
CtcResult<T> ctc_loss(const Tensor<T>& logits, std::span<const int> target) {
  if (logits.rank() != 2) {
    throw DimensionError("ctc_loss expects logits [T, V+1], got " + shape_str(logits.shape()));
  }
  const std::size_t frames = logits.dim(0), symbols = logits.dim(1);
  check_target(target, symbols);
  if (frames < ctc_min_frames(target)) {
    return {Tensor<T>::scalar(std::numeric_limits<T>::infinity()), false};
  }
  auto lat = std::make_shared<LogProbLattice>(LogProbLattice::from_logits(logits));
  const auto ext = extend(target);
  const auto alpha = forward_table(*lat, ext);
  const double log_p = total_log_prob(alpha, frames, ext.size());

  auto out = make_output<T>({1}, {&logits});
  out.at(0) = static_cast<T>(-log_p);
  if (out.requires_grad()) {
    // Posterior symbol occupancy per frame, folded into the softmax gradient.
    auto grad = std::make_shared<std::vector<double>>(frames * symbols);
    const auto beta = backward_table(*lat, ext);
    const std::size_t states = ext.size();
    for (std::size_t t = 0; t < frames; ++t) {
      double* g = grad->data() + t * symbols;
      for (std::size_t k = 0; k < symbols; ++k) g[k] = std::exp(lat->at(t, k));
      for (std::size_t s = 0; s < states; ++s) {
        const double a = alpha[t * states + s], b = beta[t * states + s];
        if (a == kNegInf || b == kNegInf) continue;
        g[ext[s]] -= std::exp(a + b - log_p);
      }
    }
    record<T>(out, [logits, out, grad] {
      const T go = out.grad()[0];
      for (std::size_t i = 0; i < grad->size(); ++i)
        logits.node()->grad[i] += go * static_cast<T>((*grad)[i]);
    });
  }
  return {out, true};
}

std::vector<int> ctc_greedy_decode(const LogProbLattice& lattice) {
  std::vector<int> out;
  int prev = -1;
  for (std::size_t t = 0; t < lattice.frames; ++t) {
    int best = 0;
    for (std::size_t k = 1; k < lattice.symbols; ++k)
      if (lattice.at(t, k) > lattice.at(t, static_cast<std::size_t>(best))) best = static_cast<int>(k);
    if (best != prev && best != ctc_blank) out.push_back(best);
    prev = best;
  }
  return out;
}

EditStats edit_distance(std::span<const int> hyp, std::span<const int> ref) {
  const std::size_t n = hyp.size(), m = ref.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  const auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (hyp[i - 1] == ref[j - 1] ? 0u : 1u),
                           at(i - 1, j) + 1, at(i, j - 1) + 1});

  EditStats st;
  st.distance = at(n, m);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (hyp[i - 1] == ref[j - 1] ? 0u : 1u)) {
      if (hyp[i - 1] != ref[j - 1]) ++st.substitutions;
      --i;
      --j;
    } else if (j > 0 && at(i, j) == at(i, j - 1) + 1) {
      ++st.deletions;
      --j;
    } else {
      ++st.insertions;
      --i;
    }
  }
  return st;
}

double token_error_rate(const EditStats& stats, std::size_t ref_length) {
  if (ref_length == 0) {
    return stats.distance == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  }
  return static_cast<double>(stats.distance) / static_cast<double>(ref_length);
}

template LogProbLattice LogProbLattice::from_logits<float>(const Tensor<float>&);
template LogProbLattice LogProbLattice::from_logits<double>(const Tensor<double>&);
template CtcResult<float> ctc_loss<float>(const Tensor<float>&, std::span<const int>);
template CtcResult<double> ctc_loss<double>(const Tensor<double>&, std::span<const int>);

}  // namespace mcf

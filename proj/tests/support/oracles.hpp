// SPDX-License-Identifier: Apache-2.0
//
// Reference implementations used only by tests: brute-force CTC path
// enumeration, direct-loop convolutions and a plain central-difference
// gradient. None of them share code with the library kernels.

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

namespace mcf::oracle {

inline std::vector<double> log_softmax_rows(const std::vector<double>& logits, std::size_t frames,
                                            std::size_t symbols) {
  std::vector<double> out(logits.size());
  for (std::size_t t = 0; t < frames; ++t) {
    double z = 0;
    for (std::size_t k = 0; k < symbols; ++k) z += std::exp(logits[t * symbols + k]);
    for (std::size_t k = 0; k < symbols; ++k) out[t * symbols + k] = logits[t * symbols + k] - std::log(z);
  }
  return out;
}

// Collapse repeats, then drop blanks (symbol 0).
inline std::vector<int> collapse(const std::vector<int>& path) {
  std::vector<int> out;
  int prev = -1;
  for (int s : path) {
    if (s != prev && s != 0) out.push_back(s);
    prev = s;
  }
  return out;
}

// Sums the probability of every length-T path over `symbols` symbols that
// collapses to `target`. Returns -log p, +inf when no path does.
inline double brute_force_ctc_nll(const std::vector<double>& logits, std::size_t frames, std::size_t symbols,
                                  const std::vector<int>& target) {
  const auto lp = log_softmax_rows(logits, frames, symbols);
  std::vector<int> path(frames, 0);
  double total = 0;
  while (true) {
    if (collapse(path) == target) {
      double log_p = 0;
      for (std::size_t t = 0; t < frames; ++t) log_p += lp[t * symbols + static_cast<std::size_t>(path[t])];
      total += std::exp(log_p);
    }
    std::size_t t = 0;
    while (t < frames && static_cast<std::size_t>(++path[t]) == symbols) path[t++] = 0;
    if (t == frames) break;
  }
  return total > 0 ? -std::log(total) : INFINITY;
}

// Central differences of f at x.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// y[t, c] = b[c] + sum_j w[c, j] x[t + j - k/2, c], zero outside [0, T).
inline std::vector<double> depthwise_conv(const std::vector<double>& x, std::size_t frames, std::size_t channels,
                                          const std::vector<double>& w, const std::vector<double>& b,
                                          std::size_t k) {
  std::vector<double> y(frames * channels);
  const long half = static_cast<long>(k / 2);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t c = 0; c < channels; ++c) {
      double acc = b[c];
      for (std::size_t j = 0; j < k; ++j) {
        const long src = static_cast<long>(t) + static_cast<long>(j) - half;
        if (src >= 0 && src < static_cast<long>(frames)) acc += w[c * k + j] * x[static_cast<std::size_t>(src) * channels + c];
      }
      y[t * channels + c] = acc;
    }
  return y;
}

// Group g reads input channels [g*m, (g+1)*m) and writes output channel g.
inline std::vector<double> grouped_conv(const std::vector<double>& x, std::size_t frames, std::size_t groups,
                                        std::size_t m, const std::vector<double>& w, const std::vector<double>& b,
                                        std::size_t k) {
  const std::size_t cin = groups * m;
  std::vector<double> y(frames * groups);
  const long half = static_cast<long>(k / 2);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t g = 0; g < groups; ++g) {
      double acc = b[g];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          const long src = static_cast<long>(t) + static_cast<long>(j) - half;
          if (src >= 0 && src < static_cast<long>(frames))
            acc += w[(g * m + i) * k + j] * x[static_cast<std::size_t>(src) * cin + g * m + i];
        }
      y[t * groups + g] = acc;
    }
  return y;
}

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double bound = 1.0) {
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace mcf::oracle

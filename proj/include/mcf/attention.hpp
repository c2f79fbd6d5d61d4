// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mcf/nn.hpp"

namespace mcf {

template <typename T>
struct MhaParams {
  std::size_t heads = 1;
  LinearParams<T> query;
  LinearParams<T> key;
  LinearParams<T> value;
  LinearParams<T> output;

  static MhaParams create(std::size_t d_model, std::size_t heads, Rng& rng);
  std::size_t d_model() const { return query.in_features(); }
  std::size_t head_dim() const { return d_model() / heads; }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    query.visit(prefix + ".query", f);
    key.visit(prefix + ".key", f);
    value.visit(prefix + ".value", f);
    output.visit(prefix + ".output", f);
  }
};

// Row-stochastic [T, T] attention weights of one head, stored row-major.
struct AttentionMap {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t frames = 0;
  std::vector<double> weights;

  double at(std::size_t i, std::size_t j) const { return weights[i * frames + j]; }
};

template <typename T>
struct MhaOutput {
  Tensor<T> output;
  std::vector<AttentionMap> maps;  // filled only when captured
};

// Full bidirectional scaled dot-product self-attention, no masking.
template <typename T>
MhaOutput<T> mha_forward(const Tensor<T>& x, const MhaParams<T>& p, bool capture,
                         std::size_t layer = 0);

}  // namespace mcf

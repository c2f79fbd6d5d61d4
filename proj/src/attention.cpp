// SPDX-License-Identifier: Apache-2.0

#include "mcf/attention.hpp"

#include <cmath>

namespace mcf {

template <typename T>
MhaParams<T> MhaParams<T>::create(std::size_t d_model, std::size_t heads, Rng& rng) {
  if (heads == 0 || d_model % heads != 0) {
    throw ConfigError(std::to_string(heads) + " heads do not divide d_model " +
                      std::to_string(d_model));
  }
  MhaParams p;
  p.heads = heads;
  p.query = LinearParams<T>::create(d_model, d_model, rng);
  p.key = LinearParams<T>::create(d_model, d_model, rng);
  p.value = LinearParams<T>::create(d_model, d_model, rng);
  p.output = LinearParams<T>::create(d_model, d_model, rng);
  return p;
}

template <typename T>
MhaOutput<T> mha_forward(const Tensor<T>& x, const MhaParams<T>& p, bool capture,
                         std::size_t layer) {
  if (x.rank() != 2 || x.dim(1) != p.d_model()) {
    throw DimensionError("mha_forward: input " + shape_str(x.shape()) + " vs d_model " +
                         std::to_string(p.d_model()));
  }
  const std::size_t dh = p.head_dim();
  const T inv_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const auto q = linear(x, p.query);
  const auto k = linear(x, p.key);
  const auto v = linear(x, p.value);

  MhaOutput<T> result;
  std::vector<Tensor<T>> heads;
  heads.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    const auto qh = slice_channels(q, h * dh, (h + 1) * dh);
    const auto kh = slice_channels(k, h * dh, (h + 1) * dh);
    const auto vh = slice_channels(v, h * dh, (h + 1) * dh);
    const auto weights = softmax(scale(matmul(qh, transpose(kh)), inv_scale));
    if (capture) {
      AttentionMap map{layer, h, x.dim(0), {}};
      map.weights.assign(weights.data().begin(), weights.data().end());
      result.maps.push_back(std::move(map));
    }
    heads.push_back(matmul(weights, vh));
  }
  result.output = linear(p.heads == 1 ? heads[0] : concat_channels(heads), p.output);
  return result;
}

template struct MhaParams<float>;
template struct MhaParams<double>;
template MhaOutput<float> mha_forward<float>(const Tensor<float>&, const MhaParams<float>&, bool,
                                             std::size_t);
template MhaOutput<double> mha_forward<double>(const Tensor<double>&, const MhaParams<double>&,
                                               bool, std::size_t);

}  // namespace mcf

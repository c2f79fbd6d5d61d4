// SPDX-License-Identifier: Apache-2.0

#include "mcf/optimizer.hpp"

#include <cmath>

#include "mcf/errors.hpp"

namespace mcf {

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
  if (!(opts_.lr >= 0) || !(opts_.beta1 >= 0 && opts_.beta1 < 1) || !(opts_.beta2 >= 0 && opts_.beta2 < 1) ||
      !(opts_.eps > 0)) {
    throw ConfigError("Adam: need lr >= 0, betas in [0, 1) and eps > 0");
  }
  for (auto& p : params_) {
    if (!p.requires_grad()) p.set_requires_grad(true);
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto data = params_[i].data();
    auto grad = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = grad[j];
      m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g;
      v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g * g;
      const double update = opts_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + opts_.eps);
      data[j] = static_cast<T>(data[j] - update);
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
double clip_grad_norm(const std::vector<Tensor<T>>& params, double max_norm) {
  double sq = 0;
  for (const auto& p : params)
    for (T g : p.grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const double f = max_norm / norm;
    for (auto p : params)
      for (T& g : p.grad()) g = static_cast<T>(g * f);
  }
  return norm;
}

template class Adam<float>;
template class Adam<double>;
template double clip_grad_norm<float>(const std::vector<Tensor<float>>&, double);
template double clip_grad_norm<double>(const std::vector<Tensor<double>>&, double);

}  // namespace mcf

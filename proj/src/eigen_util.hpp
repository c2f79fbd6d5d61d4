// SPDX-License-Identifier: Apache-2.0
//
// Private helpers mapping raw row-major buffers onto Eigen matrices.

#pragma once

#include <Eigen/Core>
#include <cstddef>

namespace mcf {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<RowMat<T>> map_mat(T* p, std::size_t rows, std::size_t cols) {
  return Eigen::Map<RowMat<T>>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
Eigen::Map<const RowMat<T>> map_mat(const T* p, std::size_t rows, std::size_t cols) {
  return Eigen::Map<const RowMat<T>>(p, static_cast<Eigen::Index>(rows),
                                     static_cast<Eigen::Index>(cols));
}

}  // namespace mcf

#pragma once

// Sequence-axis softmax and log-sum-exp. Both reduce along the row (sequence)
// dimension, independently for every column.

#include <cmath>
#include <vector>

#include "attnflow/matrix.hpp"

namespace attnflow {

namespace detail {

inline RowVector column_max(const Matrix& a) {
  RowVector m(a.cols());
  for (std::size_t j = 0; j < a.cols(); ++j) m[j] = a(0, j);
  for (std::size_t i = 1; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) m[j] = std::max(m[j], a(i, j));
  }
  return m;
}

}  // namespace detail

/// σ(A)_ij = exp(A_ij) / Σ_k exp(A_kj). Every column of the result sums to one.
inline Matrix softmax_seq(const Matrix& a) {
  const RowVector m = detail::column_max(a);
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<double> e(rows * cols);
  RowVector sums(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = std::exp(a(i, j) - m[j]);
      e[i * cols + j] = v;
      sums[j] += v;
    }
  }
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) e[i * cols + j] /= sums[j];
  }
  return Matrix(rows, cols, std::move(e));
}

/// lse_j = log Σ_k exp(A_kj), one entry per column.
inline RowVector lse_seq(const Matrix& a) {
  const RowVector m = detail::column_max(a);
  RowVector sums(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) sums[j] += std::exp(a(i, j) - m[j]);
  }
  RowVector out(a.cols());
  for (std::size_t j = 0; j < a.cols(); ++j) out[j] = m[j] + std::log(sums[j]);
  return out;
}

}  // namespace attnflow

#pragma once

// Dense row-major float64 matrix with value semantics. Every operation
// returns a fresh matrix; no method mutates its receiver.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attnflow/errors.hpp"

namespace attnflow {

using RowVector = std::vector<double>;

class Matrix {
 public:
  /// Builds a rows x cols matrix from row-major `data`. Throws DimensionError
  /// on a zero extent or size mismatch and NonFiniteError on NaN/Inf.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows_ == 0 || cols_ == 0) {
      throw DimensionError("matrix extents must be >= 1, got " + shape_string(rows_, cols_));
    }
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("matrix data size " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(rows_, cols_));
    }
    for (std::size_t k = 0; k < data_.size(); ++k) {
      if (!std::isfinite(data_[k])) throw NonFiniteError(k / cols_, k % cols_);
    }
  }

  static Matrix constant(std::size_t rows, std::size_t cols, double value) {
    return Matrix(rows, cols, std::vector<double>(rows * cols, value));
  }

  static Matrix zeros(std::size_t rows, std::size_t cols) { return constant(rows, cols, 0.0); }

  static Matrix identity(std::size_t n) {
    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
    return Matrix(n, n, std::move(d));
  }

  static Matrix diagonal(std::initializer_list<double> diag) {
    const std::size_t n = diag.size();
    std::vector<double> d(n * n, 0.0);
    std::size_t i = 0;
    for (double v : diag) {
      d[i * n + i] = v;
      ++i;
    }
    return Matrix(n, n, std::move(d));
  }

  /// Literal construction: Matrix::from_rows({{1, 2}, {3, 4}}).
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> d;
    d.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged row list in Matrix::from_rows");
      d.insert(d.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(d));
  }

  /// Entry (i, j) = fn(i, j).
  template <typename Fn>
  static Matrix generate(std::size_t rows, std::size_t cols, Fn&& fn) {
    std::vector<double> d(rows * cols);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) d[i * cols + j] = fn(i, j);
    }
    return Matrix(rows, cols, std::move(d));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool is_square() const noexcept { return rows_ == cols_; }

  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }
  double at(std::size_t i, std::size_t j) const {
    if (i >= rows_ || j >= cols_) {
      throw DimensionError("index (" + std::to_string(i) + "," + std::to_string(j) +
                           ") outside " + shape_string(rows_, cols_));
    }
    return (*this)(i, j);
  }

  std::span<const double> data() const noexcept { return data_; }

  /// Copy with entry (i, j) replaced; the finite-difference probe primitive.
  Matrix with_entry(std::size_t i, std::size_t j, double value) const {
    std::vector<double> d = data_;
    d[i * cols_ + j] = value;
    return Matrix(rows_, cols_, std::move(d));
  }

  Matrix transpose() const {
    std::vector<double> d(data_.size());
    for (std::size_t i = 0; i < rows_; ++i) {
      for (std::size_t j = 0; j < cols_; ++j) d[j * rows_ + i] = data_[i * cols_ + j];
    }
    return Matrix(cols_, rows_, std::move(d));
  }

  std::string shape() const { return shape_string(rows_, cols_); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  static std::string shape_string(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
  }

  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

namespace detail {

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape() + " vs " + b.shape());
  }
}

template <typename Fn>
Matrix zip(const Matrix& a, const Matrix& b, const char* op, Fn&& fn) {
  require_same_shape(a, b, op);
  auto x = a.data();
  auto y = b.data();
  std::vector<double> d(x.size());
  for (std::size_t k = 0; k < d.size(); ++k) d[k] = fn(x[k], y[k]);
  return Matrix(a.rows(), a.cols(), std::move(d));
}

}  // namespace detail

inline Matrix operator+(const Matrix& a, const Matrix& b) {
  return detail::zip(a, b, "add", [](double x, double y) { return x + y; });
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
  return detail::zip(a, b, "subtract", [](double x, double y) { return x - y; });
}

inline Matrix operator-(const Matrix& a) {
  return Matrix::generate(a.rows(), a.cols(), [&](std::size_t i, std::size_t j) { return -a(i, j); });
}

inline Matrix operator*(double s, const Matrix& a) {
  return Matrix::generate(a.rows(), a.cols(), [&](std::size_t i, std::size_t j) { return s * a(i, j); });
}

inline Matrix operator*(const Matrix& a, double s) { return s * a; }

/// Matrix product.
inline Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + a.shape() + " * " + b.shape());
  }
  const std::size_t n = a.rows(), m = b.cols(), inner = a.cols();
  auto x = a.data();
  auto y = b.data();
  std::vector<double> d(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = x[i * inner + k];
      for (std::size_t j = 0; j < m; ++j) d[i * m + j] += aik * y[k * m + j];
    }
  }
  return Matrix(n, m, std::move(d));
}

/// A·Bᵀ without materialising the transpose.
inline Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_transposed: column counts differ " + a.shape() + " * " + b.shape() + "^T");
  }
  const std::size_t n = a.rows(), m = b.rows(), inner = a.cols();
  auto x = a.data();
  auto y = b.data();
  std::vector<double> d(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < inner; ++k) s += x[i * inner + k] * y[j * inner + k];
      d[i * m + j] = s;
    }
  }
  return Matrix(n, m, std::move(d));
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  return detail::zip(a, b, "hadamard", [](double x, double y) { return x * y; });
}

inline double frobenius_inner(const Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "frobenius_inner");
  auto x = a.data();
  auto y = b.data();
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) s += x[k] * y[k];
  return s;
}

inline double frobenius_norm(const Matrix& a) { return std::sqrt(frobenius_inner(a, a)); }

inline double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) { return max_abs(a - b); }

/// 1ᵀA: the sum of each column.
inline RowVector column_sums(const Matrix& a) {
  RowVector s(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) s[j] += a(i, j);
  }
  return s;
}

inline bool is_lower_triangular(const Matrix& a) {
  if (!a.is_square()) return false;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = i + 1; j < a.cols(); ++j) {
      if (a(i, j) != 0.0) return false;
    }
  }
  return true;
}

inline bool is_symmetric(const Matrix& a, double tol) {
  if (!a.is_square()) return false;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = i + 1; j < a.cols(); ++j) {
      if (std::abs(a(i, j) - a(j, i)) > tol) return false;
    }
  }
  return true;
}

/// Pivots of an unpivoted Cholesky factorisation. The matrix is positive
/// definite iff every returned pivot is > 0; factorisation stops at the first
/// non-positive pivot, which is the last element returned.
inline std::vector<double> cholesky_pivots(const Matrix& a) {
  if (!a.is_square()) throw DimensionError("cholesky_pivots: matrix not square " + a.shape());
  const std::size_t n = a.rows();
  std::vector<double> l(n * n, 0.0);
  std::vector<double> pivots;
  pivots.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l[j * n + k] * l[j * n + k];
    pivots.push_back(d);
    if (!(d > 0.0)) break;
    const double ljj = std::sqrt(d);
    l[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      l[i * n + j] = s / ljj;
    }
  }
  return pivots;
}

inline bool is_positive_definite(const Matrix& a) {
  if (!a.is_square()) return false;
  const auto p = cholesky_pivots(a);
  return p.size() == a.rows() && std::all_of(p.begin(), p.end(), [](double v) { return v > 0.0; });
}

/// Lower-triangular L with A = LLᵀ. Throws ParameterError unless A is
/// symmetric positive definite.
inline Matrix cholesky_lower(const Matrix& a) {
  if (!a.is_square()) throw ParameterError("cholesky_lower: matrix not square " + a.shape());
  const std::size_t n = a.rows();
  std::vector<double> l(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l[j * n + k] * l[j * n + k];
    if (!(d > 0.0)) {
      throw ParameterError("cholesky_lower: non-positive pivot at " + std::to_string(j));
    }
    const double ljj = std::sqrt(d);
    l[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      l[i * n + j] = s / ljj;
    }
  }
  return Matrix(n, n, std::move(l));
}

/// θ = φφᵀ from a lower-triangular φ with strictly positive diagonal.
inline Matrix assemble_spd(const Matrix& phi) {
  if (!phi.is_square()) throw ParameterError("assemble_spd: phi must be square, got " + phi.shape());
  if (!is_lower_triangular(phi)) throw ParameterError("assemble_spd: phi must be lower-triangular");
  for (std::size_t i = 0; i < phi.rows(); ++i) {
    if (!(phi(i, i) > 0.0)) {
      throw ParameterError("assemble_spd: phi diagonal entry " + std::to_string(i) + " is not positive");
    }
  }
  const std::size_t n = phi.rows();
  // Symmetric by construction: each (i, j) and (j, i) pair is one sum.
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k <= j; ++k) s += phi(i, k) * phi(j, k);
      d[i * n + j] = s;
      d[j * n + i] = s;
    }
  }
  return Matrix(n, n, std::move(d));
}

}  // namespace attnflow

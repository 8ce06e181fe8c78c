#pragma once

// Independent gradient verification: the order-3 LSE gradient tensor, the
// general-model gradient composition, central finite differences and a
// report comparing analytic against numeric gradients.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "attnflow/errors.hpp"
#include "attnflow/matrix.hpp"
#include "attnflow/models.hpp"
#include "attnflow/random.hpp"
#include "attnflow/softmax.hpp"

namespace attnflow {

/// Dense order-3 tensor, row-major over (d1, d2, d3).
class Tensor3 {
 public:
  Tensor3(std::array<std::size_t, 3> dims, std::vector<double> data)
      : dims_(dims), data_(std::move(data)) {
    if (dims_[0] == 0 || dims_[1] == 0 || dims_[2] == 0) {
      throw DimensionError("Tensor3 extents must be >= 1");
    }
    if (data_.size() != dims_[0] * dims_[1] * dims_[2]) {
      throw DimensionError("Tensor3 data size does not match extents");
    }
    for (std::size_t k = 0; k < data_.size(); ++k) {
      if (!std::isfinite(data_[k])) throw NonFiniteError(k / dims_[2], k % dims_[2]);
    }
  }

  const std::array<std::size_t, 3>& dims() const noexcept { return dims_; }

  double operator()(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }

  /// The (d2 x d3) matrix at fixed first index i.
  Matrix slice(std::size_t i) const {
    return Matrix::generate(dims_[1], dims_[2], [&](std::size_t j, std::size_t k) { return (*this)(i, j, k); });
  }

  /// 1ᵀT: sums over the first index, giving a d2 x d3 matrix.
  Matrix contract_first() const {
    return Matrix::generate(dims_[1], dims_[2], [&](std::size_t j, std::size_t k) {
      double s = 0.0;
      for (std::size_t i = 0; i < dims_[0]; ++i) s += (*this)(i, j, k);
      return s;
    });
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

 private:
  std::array<std::size_t, 3> dims_;
  std::vector<double> data_;
};

/// (A ⊗̄ B)_ijk = A_ij B_ik. Row counts of A and B must match.
inline Tensor3 barotimes(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("barotimes: row mismatch " + a.shape() + " vs " + b.shape());
  }
  const std::size_t d1 = a.rows(), d2 = a.cols(), d3 = b.cols();
  std::vector<double> t(d1 * d2 * d3);
  for (std::size_t i = 0; i < d1; ++i) {
    for (std::size_t j = 0; j < d2; ++j) {
      for (std::size_t k = 0; k < d3; ++k) t[(i * d2 + j) * d3 + k] = a(i, j) * b(i, k);
    }
  }
  return Tensor3({d1, d2, d3}, std::move(t));
}

/// Jacobian of Z ↦ lse_seq(Zθᵀ) as σ(Zθᵀ)ᵀ ⊗̄ θ.
///
/// Layout is (output component j, gradient row, gradient col), dims
/// (Fo, S, Fi): entry (j, i, k) = ∂ lse_j / ∂ Z_ik = σ_ij θ_jk. Summing over
/// the first index gives cross_attention(Z, θ).
inline Tensor3 lse_grad_tensor(const FeatureMatrix& z, const LinearParams& p) {
  return barotimes(softmax_seq(linear_forward(z, p)).transpose(), p.theta);
}

/// M ↦ M : ∂_Z N(Z, θ) for some model N.
using ModelContraction = std::function<Matrix(const Matrix&)>;

/// Contraction against ∂_Z(Zθᵀ): M ↦ Mθ.
inline ModelContraction linear_model_contraction(Matrix theta) {
  return [theta = std::move(theta)](const Matrix& m) { return m * theta; };
}

/// Contraction against ∂_Z(ZθZᵀ): M ↦ MZθᵀ + MᵀZθ.
inline ModelContraction quad_model_contraction(Matrix z, Matrix theta) {
  return [z = std::move(z), theta = std::move(theta)](const Matrix& m) {
    return m * z * theta.transpose() + m.transpose() * z * theta;
  };
}

/// ∂_Z ℓ = (σ(N) − C) : ∂_Z N for an arbitrary differentiable model.
inline Matrix compose_general_grad(const Matrix& softmax_of_logits, const LabelMatrix& c,
                                   const ModelContraction& model_z_grad) {
  if (softmax_of_logits.rows() != c.rows() || softmax_of_logits.cols() != c.cols()) {
    throw DimensionError("compose_general_grad: softmax " + softmax_of_logits.shape() + " vs labels " +
                         c.values().shape());
  }
  return model_z_grad(softmax_of_logits - c.values());
}

inline constexpr double kDefaultFdStep = 1e-5;
inline constexpr double kDefaultRelTol = 1e-6;
inline constexpr double kDefaultAbsTol = 1e-8;

using ScalarLoss = std::function<double(const Matrix&)>;

/// Central differences (loss(X + hE_ij) − loss(X − hE_ij)) / 2h, entry by entry.
inline Matrix fd_gradient(const ScalarLoss& loss, const Matrix& x, double step = kDefaultFdStep) {
  if (!(step > 0.0)) throw ValidationError("fd_gradient: step must be positive");
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      double plus = 0.0, minus = 0.0;
      try {
        plus = loss(x.with_entry(i, j, x(i, j) + step));
        minus = loss(x.with_entry(i, j, x(i, j) - step));
      } catch (const NumericalError& e) {
        throw OracleError(i, j, "fd_gradient: loss evaluation failed at entry (" + std::to_string(i) +
                                    "," + std::to_string(j) + "): " + e.what());
      }
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw OracleError(i, j, "fd_gradient: non-finite loss at entry (" + std::to_string(i) + "," +
                                    std::to_string(j) + ")");
      }
      g[i * x.cols() + j] = (plus - minus) / (2.0 * step);
    }
  }
  return Matrix(x.rows(), x.cols(), std::move(g));
}

struct GradReport {
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  std::pair<std::size_t, std::size_t> worst_entry{0, 0};
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  bool passed = true;
};

/// Entry error |a − n| / max(|a|, |n|, abs_tol / rel_tol). Dividing by the
/// floor abs_tol / rel_tol makes an entry pass whenever |a − n| ≤ abs_tol, so
/// the verdict is a relative check with an absolute floor and still reads
/// passed ⟺ max_rel_error ≤ rel_tol.
inline GradReport grad_check(const Matrix& analytic, const Matrix& numeric,
                             double rel_tol = kDefaultRelTol, double abs_tol = kDefaultAbsTol) {
  detail::require_same_shape(analytic, numeric, "grad_check");
  if (!(rel_tol > 0.0) || !(abs_tol > 0.0)) throw ValidationError("grad_check: tolerances must be positive");
  GradReport r;
  const double floor = abs_tol / rel_tol;
  for (std::size_t i = 0; i < analytic.rows(); ++i) {
    for (std::size_t j = 0; j < analytic.cols(); ++j) {
      const double a = analytic(i, j), n = numeric(i, j);
      const double err = std::abs(a - n);
      const double rel = err / std::max({std::abs(a), std::abs(n), floor});
      r.max_abs_error = std::max(r.max_abs_error, err);
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst_entry = {i, j};
      }
    }
  }
  r.analytic_norm = frobenius_norm(analytic);
  r.numeric_norm = frobenius_norm(numeric);
  r.passed = r.max_rel_error <= rel_tol;
  return r;
}

// Random instances for certification runs.

struct LinearInstance {
  FeatureMatrix z;
  LinearParams params;
  LabelMatrix labels;
};

struct QuadInstance {
  FeatureMatrix z;
  QuadParams params;
  LabelMatrix labels;
};

/// Random column-stochastic labels: softmax of a standard-normal matrix.
inline LabelMatrix random_labels(Rng& rng, std::size_t rows, std::size_t cols) {
  return LabelMatrix(softmax_seq(rng.normal_matrix(rows, cols)));
}

/// S ∈ [2, 6], Fi ∈ [1, 8], Fo ∈ [1, 5]; Z and θ standard normal.
inline LinearInstance random_linear_instance(Rng& rng) {
  const std::size_t s = rng.uniform_index(2, 6);
  const std::size_t fi = rng.uniform_index(1, 8);
  const std::size_t fo = rng.uniform_index(1, 5);
  Matrix z = rng.normal_matrix(s, fi);
  Matrix theta = rng.normal_matrix(fo, fi);
  LabelMatrix c = random_labels(rng, s, fo);
  return {std::move(z), LinearParams{std::move(theta)}, std::move(c)};
}

/// Lower-triangular φ with standard-normal entries scaled by 1/√Fi and a
/// diagonal of |N(0,1)|/√Fi + 0.1, keeping quadratic logits O(1).
inline Matrix random_phi(Rng& rng, std::size_t fi) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(fi));
  return Matrix::generate(fi, fi, [&](std::size_t i, std::size_t j) {
    if (j > i) return 0.0;
    const double v = scale * rng.normal();
    return i == j ? std::abs(v) + 0.1 : v;
  });
}

/// S ∈ [2, 6], Fi ∈ [1, 8]; Z standard normal, labels S x S.
inline QuadInstance random_quad_instance(Rng& rng) {
  const std::size_t s = rng.uniform_index(2, 6);
  const std::size_t fi = rng.uniform_index(1, 8);
  Matrix z = rng.normal_matrix(s, fi);
  QuadParams p(random_phi(rng, fi));
  LabelMatrix c = random_labels(rng, s, s);
  return {std::move(z), std::move(p), std::move(c)};
}

}  // namespace attnflow

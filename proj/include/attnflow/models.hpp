#pragma once

// Linear (N = Zθᵀ) and quadratic (N = ZθZᵀ) multinomial-regression models
// over latent features Z, their point-wise cross-entropy, the attention
// operators they induce, and analytic gradients.

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "attnflow/errors.hpp"
#include "attnflow/matrix.hpp"
#include "attnflow/softmax.hpp"

namespace attnflow {

/// Latent features Z, S x Fi.
using FeatureMatrix = Matrix;
/// Model output N(Z, θ), S x Fo (linear) or S x S (quadratic).
using Logits = Matrix;

enum class ModelKind { linear, quadratic };

/// Which analytic form of the quadratic-model Z-gradient to use.
///   exact          (σ + σᵀ − C − Cᵀ)Zθ, agrees with finite differences
///   paper_literal  2σZθ − (C + Cᵀ)Zθ, assumes σ symmetric
enum class GradForm { exact, paper_literal };

inline constexpr double kLabelSumTolerance = 1e-12;
inline constexpr double kSymmetryTolerance = 1e-14;

/// Column-stochastic class targets: entries in [0, 1], each column sums to one.
class LabelMatrix {
 public:
  explicit LabelMatrix(Matrix values, bool strict_one_hot = false)
      : values_(std::move(values)), one_hot_(strict_one_hot) {
    const RowVector sums = column_sums(values_);
    for (std::size_t j = 0; j < values_.cols(); ++j) {
      if (std::abs(sums[j] - 1.0) > kLabelSumTolerance) {
        throw ValidationError("label column " + std::to_string(j) + " sums to " +
                              std::to_string(sums[j]) + ", expected 1");
      }
    }
    for (std::size_t i = 0; i < values_.rows(); ++i) {
      for (std::size_t j = 0; j < values_.cols(); ++j) {
        const double v = values_(i, j);
        if (v < 0.0 || v > 1.0) {
          throw ValidationError("label entry (" + std::to_string(i) + "," + std::to_string(j) +
                                ") outside [0,1]");
        }
        if (one_hot_ && v != 0.0 && v != 1.0) {
          throw ValidationError("label column " + std::to_string(j) + " is not one-hot");
        }
      }
    }
  }

  /// Column j is one-hot at row positions[j].
  static LabelMatrix one_hot(std::size_t rows, const std::vector<std::size_t>& positions) {
    std::vector<double> d(rows * positions.size(), 0.0);
    for (std::size_t j = 0; j < positions.size(); ++j) {
      if (positions[j] >= rows) throw DimensionError("one-hot position out of range");
      d[positions[j] * positions.size() + j] = 1.0;
    }
    return LabelMatrix(Matrix(rows, positions.size(), std::move(d)), true);
  }

  /// Every entry 1/rows.
  static LabelMatrix uniform(std::size_t rows, std::size_t cols) {
    return LabelMatrix(Matrix::constant(rows, cols, 1.0 / static_cast<double>(rows)));
  }

  const Matrix& values() const noexcept { return values_; }
  bool strict_one_hot() const noexcept { return one_hot_; }
  std::size_t rows() const noexcept { return values_.rows(); }
  std::size_t cols() const noexcept { return values_.cols(); }

  /// Row index of the first maximal entry of column j.
  std::size_t hot_position(std::size_t j) const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values_.rows(); ++i) {
      if (values_(i, j) > values_(best, j)) best = i;
    }
    return best;
  }

 private:
  Matrix values_;
  bool one_hot_;
};

/// θ ∈ R^{Fo x Fi}.
struct LinearParams {
  Matrix theta;
};

/// Symmetric positive-definite θ = φφᵀ with φ lower-triangular.
class QuadParams {
 public:
  explicit QuadParams(Matrix phi) : phi_(std::move(phi)), theta_(assemble_spd(phi_)) {}

  /// Recovers φ by Cholesky. θ must be symmetric within 1e-14 and PD.
  static QuadParams from_theta(const Matrix& theta) {
    if (!is_symmetric(theta, kSymmetryTolerance)) {
      throw ParameterError("quadratic theta is not symmetric");
    }
    return QuadParams(cholesky_lower(theta));
  }

  const Matrix& phi() const noexcept { return phi_; }
  const Matrix& theta() const noexcept { return theta_; }
  std::size_t features() const noexcept { return phi_.rows(); }

 private:
  Matrix phi_;
  Matrix theta_;
};

namespace detail {

/// Throws DimensionError(message()) unless ok; the message is only built on failure.
template <typename MessageFn>
void require(bool ok, MessageFn&& message) {
  if (!ok) throw DimensionError(message());
}

inline void check_linear(const Matrix& z, const LinearParams& p) {
  require(z.cols() == p.theta.cols(),
          [&] { return "linear model: Z is " + z.shape() + " but theta is " + p.theta.shape(); });
}

inline void check_linear(const Matrix& z, const LinearParams& p, const LabelMatrix& c) {
  check_linear(z, p);
  require(c.rows() == z.rows() && c.cols() == p.theta.rows(), [&] {
    return "linear model: labels are " + c.values().shape() + ", expected " + std::to_string(z.rows()) + "x" +
           std::to_string(p.theta.rows());
  });
}

inline void check_quad(const Matrix& z, const QuadParams& p) {
  require(z.cols() == p.features(),
          [&] { return "quadratic model: Z is " + z.shape() + " but theta is " + p.theta().shape(); });
}

inline void check_quad(const Matrix& z, const QuadParams& p, const LabelMatrix& c) {
  check_quad(z, p);
  require(c.rows() == z.rows() && c.cols() == z.rows(), [&] {
    return "quadratic model: labels must be " + std::to_string(z.rows()) + "x" + std::to_string(z.rows()) +
           ", got " + c.values().shape();
  });
}

}  // namespace detail

inline Logits linear_forward(const FeatureMatrix& z, const LinearParams& p) {
  detail::check_linear(z, p);
  return matmul_transposed(z, p.theta);
}

inline Logits quad_forward(const FeatureMatrix& z, const QuadParams& p) {
  detail::check_quad(z, p);
  return z * p.theta() * z.transpose();
}

/// ℓ = ⟨1, LSE(N)⟩ − ⟨C, N⟩.
inline double pointwise_ce(const Logits& n, const LabelMatrix& c) {
  detail::require(n.rows() == c.rows() && n.cols() == c.cols(),
                  [&] { return "pointwise_ce: logits " + n.shape() + " vs labels " + c.values().shape(); });
  double lse_total = 0.0;
  for (double v : lse_seq(n)) lse_total += v;
  return lse_total - frobenius_inner(c.values(), n);
}

inline double linear_ce(const FeatureMatrix& z, const LinearParams& p, const LabelMatrix& c) {
  return pointwise_ce(linear_forward(z, p), c);
}

inline double quad_ce(const FeatureMatrix& z, const QuadParams& p, const LabelMatrix& c) {
  return pointwise_ce(quad_forward(z, p), c);
}

/// CA(Z, θ) = σ(Zθᵀ)θ.
inline Matrix cross_attention(const FeatureMatrix& z, const LinearParams& p) {
  return softmax_seq(linear_forward(z, p)) * p.theta;
}

/// SA(X) = σ(XXᵀ)X.
inline Matrix self_attention(const Matrix& x) { return softmax_seq(matmul_transposed(x, x)) * x; }

/// ∂_Z ℓ = CA(Z, θ) − Cθ.
inline Matrix grad_z_linear(const FeatureMatrix& z, const LinearParams& p, const LabelMatrix& c) {
  detail::check_linear(z, p, c);
  return cross_attention(z, p) - c.values() * p.theta;
}

inline Matrix grad_z_quad(const FeatureMatrix& z, const QuadParams& p, const LabelMatrix& c,
                          GradForm form = GradForm::exact) {
  detail::check_quad(z, p, c);
  const Matrix sigma = softmax_seq(quad_forward(z, p));
  const Matrix z_theta = z * p.theta();
  const Matrix label_sym = c.values() + c.values().transpose();
  switch (form) {
    case GradForm::paper_literal:
      return 2.0 * (sigma * z_theta) - label_sym * z_theta;
    case GradForm::exact:
    default:
      return (sigma + sigma.transpose() - label_sym) * z_theta;
  }
}

/// ∂_θ ℓ = (σ(Zθᵀ) − C)ᵀZ, Fo x Fi.
inline Matrix grad_theta_linear(const FeatureMatrix& z, const LinearParams& p, const LabelMatrix& c) {
  detail::check_linear(z, p, c);
  return (softmax_seq(linear_forward(z, p)) - c.values()).transpose() * z;
}

/// ‖CA(Z, θ) − Cθ‖_F; zero exactly at a stationary point of ℓ in Z.
inline double fixed_point_residual(const FeatureMatrix& z, const LinearParams& p, const LabelMatrix& c) {
  return frobenius_norm(grad_z_linear(z, p, c));
}

}  // namespace attnflow

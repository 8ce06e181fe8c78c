#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "attnflow/matrix.hpp"
#include "attnflow/random.hpp"
#include "attnflow/softmax.hpp"

namespace attnflow {
namespace {

TEST(MatrixTest, RejectsNonFiniteAndEmpty) {
  EXPECT_THROW(Matrix(0, 2, {}), DimensionError);
  EXPECT_THROW(Matrix(2, 2, {1, 2, 3}), DimensionError);
  EXPECT_THROW(Matrix(1, 2, {1, std::numeric_limits<double>::quiet_NaN()}), NonFiniteError);
  try {
    Matrix(2, 2, {1, 2, std::numeric_limits<double>::infinity(), 4});
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_EQ(e.row(), 1u);
    EXPECT_EQ(e.col(), 0u);
  }
}

TEST(MatrixTest, ProductsAndTranspose) {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  const Matrix b = Matrix::from_rows({{5, 6}, {7, 8}});
  EXPECT_EQ(a * b, Matrix::from_rows({{19, 22}, {43, 50}}));
  EXPECT_EQ(matmul_transposed(a, b), a * b.transpose());
  EXPECT_EQ(a.transpose(), Matrix::from_rows({{1, 3}, {2, 4}}));
  EXPECT_THROW(a * Matrix::zeros(3, 1), DimensionError);
  EXPECT_THROW(a + Matrix::zeros(2, 3), DimensionError);
}

TEST(SoftmaxSeqTest, ZeroMatrixIsUniform) {
  const Matrix s = softmax_seq(Matrix::zeros(2, 3));
  for (double v : s.data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(SoftmaxSeqTest, HandEvaluatedColumn) {
  const Matrix s = softmax_seq(Matrix(2, 1, {0.0, std::log(3.0)}));
  EXPECT_NEAR(s(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(s(1, 0), 0.75, 1e-15);
}

TEST(SoftmaxSeqTest, PerColumnShiftInvariance) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix a = rng.normal_matrix(5, 3, 3.0);
    const Matrix shift = Matrix::generate(5, 3, [](std::size_t, std::size_t j) { return 7.0 * (j + 1.0) - 9.0; });
    EXPECT_LE(max_abs_diff(softmax_seq(a), softmax_seq(a + shift)), 1e-12);
  }
}

TEST(SoftmaxSeqTest, ColumnStochasticAndInOpenUnitInterval) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix s = softmax_seq(rng.normal_matrix(1 + trial % 6, 1 + trial % 5, 4.0));
    for (double c : column_sums(s)) EXPECT_LE(std::abs(c - 1.0), 1e-12);
    for (double v : s.data()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(SoftmaxSeqTest, StableAtLargeMagnitudes) {
  const Matrix a = Matrix::from_rows({{1e4, -1e4}, {0.0, 1e4}, {-1e4, -1e4}});
  const Matrix s = softmax_seq(a);
  EXPECT_DOUBLE_EQ(s(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(s(1, 1), 1.0);
  const RowVector l = lse_seq(a);
  EXPECT_TRUE(std::isfinite(l[0]) && std::isfinite(l[1]));
}

TEST(LseSeqTest, ZeroColumnIsLogS) {
  for (std::size_t s = 1; s <= 6; ++s) EXPECT_NEAR(lse_seq(Matrix::zeros(s, 1))[0], std::log(double(s)), 1e-15);
}

TEST(LseSeqTest, OverflowSafe) {
  const double v = lse_seq(Matrix(2, 1, {1e4, 0.0}))[0];
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, 1e4, 1e-9);
}

TEST(LseSeqTest, HandEvaluatedColumn) {
  EXPECT_NEAR(lse_seq(Matrix(2, 1, {0.0, std::log(3.0)}))[0], std::log(4.0), 1e-15);
}

TEST(LseSeqTest, BoundedByMaxAndMaxPlusLogS) {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 1 + trial % 6;
    const Matrix a = rng.normal_matrix(rows, 4, 10.0);
    const RowVector l = lse_seq(a);
    for (std::size_t j = 0; j < a.cols(); ++j) {
      double m = a(0, j);
      for (std::size_t i = 1; i < rows; ++i) m = std::max(m, a(i, j));
      EXPECT_GE(l[j], m);
      EXPECT_LE(l[j], m + std::log(double(rows)) + 1e-12);
    }
  }
}

// Gradient of Σ_j lse_j(A) is softmax_seq(A); checked against a central
// difference written out here rather than the oracle module.
TEST(LseSeqTest, FiniteDifferencesReproduceSoftmax) {
  Rng rng(14);
  const auto total = [](const Matrix& a) {
    double s = 0.0;
    for (double v : lse_seq(a)) s += v;
    return s;
  };
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = rng.normal_matrix(4, 3, 2.0);
    const Matrix s = softmax_seq(a);
    const double h = 1e-5;
    for (std::size_t i = 0; i < a.rows(); ++i) {
      for (std::size_t j = 0; j < a.cols(); ++j) {
        const double fd = (total(a.with_entry(i, j, a(i, j) + h)) - total(a.with_entry(i, j, a(i, j) - h))) / (2 * h);
        EXPECT_LE(std::abs(fd - s(i, j)), 1e-6 * std::max(1.0, std::abs(s(i, j))));
      }
    }
  }
}

TEST(FrobeniusTest, Examples) {
  EXPECT_DOUBLE_EQ(frobenius_inner(Matrix::identity(2), Matrix::identity(2)), 2.0);
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  EXPECT_DOUBLE_EQ(frobenius_inner(a, Matrix::zeros(2, 2)), 0.0);
  EXPECT_DOUBLE_EQ(frobenius_inner(a, Matrix::from_rows({{5, 6}, {7, 8}})), 70.0);
  EXPECT_DOUBLE_EQ(frobenius_norm(a), std::sqrt(30.0));
  EXPECT_THROW(frobenius_inner(a, Matrix::zeros(1, 4)), DimensionError);
}

TEST(AssembleSpdTest, Examples) {
  EXPECT_EQ(assemble_spd(Matrix::identity(3)), Matrix::identity(3));
  EXPECT_EQ(assemble_spd(Matrix::diagonal({2, 3})), Matrix::diagonal({4, 9}));
  EXPECT_EQ(assemble_spd(Matrix::from_rows({{1, 0}, {1, 1}})), Matrix::from_rows({{1, 1}, {1, 2}}));
}

TEST(AssembleSpdTest, RejectsInvalidFactors) {
  EXPECT_THROW(assemble_spd(Matrix::zeros(2, 3)), ParameterError);
  EXPECT_THROW(assemble_spd(Matrix::diagonal({1, 0})), ParameterError);
  EXPECT_THROW(assemble_spd(Matrix::diagonal({1, -2})), ParameterError);
  EXPECT_THROW(assemble_spd(Matrix::from_rows({{1, 1}, {0, 1}})), ParameterError);
}

TEST(AssembleSpdTest, RandomFactorsGiveSymmetricPositiveDefinite) {
  Rng rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + trial % 8;
    const Matrix phi = Matrix::generate(n, n, [&](std::size_t i, std::size_t j) {
      return j > i ? 0.0 : (i == j ? 0.1 + std::abs(rng.normal()) : rng.normal());
    });
    const Matrix theta = assemble_spd(phi);
    EXPECT_TRUE(is_symmetric(theta, 0.0));
    EXPECT_TRUE(is_positive_definite(theta));
    EXPECT_LE(max_abs_diff(cholesky_lower(theta), phi), 1e-10 * (1.0 + max_abs(phi)));
  }
}

TEST(CholeskyTest, DetectsIndefinite) {
  const Matrix indefinite = Matrix::from_rows({{1, 2}, {2, 1}});
  EXPECT_FALSE(is_positive_definite(indefinite));
  EXPECT_THROW(cholesky_lower(indefinite), ParameterError);
  const auto pivots = cholesky_pivots(indefinite);
  ASSERT_EQ(pivots.size(), 2u);
  EXPECT_DOUBLE_EQ(pivots[1], -3.0);
}

}  // namespace
}  // namespace attnflow

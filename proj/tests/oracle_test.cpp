#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "attnflow/oracle.hpp"

namespace attnflow {
namespace {

TEST(BarotimesTest, Examples) {
  const Tensor3 id = barotimes(Matrix::identity(2), Matrix::identity(2));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(id(i, j, k), (i == j && i == k) ? 1.0 : 0.0);

  EXPECT_EQ(barotimes(Matrix::identity(3), Matrix::zeros(3, 2)).max_abs(), 0.0);

  const Tensor3 t = barotimes(Matrix::from_rows({{1, 2}}), Matrix(1, 1, {3.0}));
  EXPECT_EQ(t.dims(), (std::array<std::size_t, 3>{1, 2, 1}));
  EXPECT_EQ(t(0, 0, 0), 3.0);
  EXPECT_EQ(t(0, 1, 0), 6.0);

  EXPECT_THROW(barotimes(Matrix::zeros(2, 2), Matrix::zeros(3, 2)), DimensionError);
}

TEST(LseGradTensorTest, ContractionGivesCrossAttention) {
  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const LinearInstance in = random_linear_instance(rng);
    const Tensor3 t = lse_grad_tensor(in.z, in.params);
    EXPECT_EQ(t.dims()[0], in.params.theta.rows());
    EXPECT_LE(max_abs_diff(t.contract_first(), cross_attention(in.z, in.params)), 1e-12);
  }
}

TEST(LseGradTensorTest, ZeroThetaGivesZeroTensor) {
  Rng rng(42);
  EXPECT_EQ(lse_grad_tensor(rng.normal_matrix(4, 3), {Matrix::zeros(2, 3)}).max_abs(), 0.0);
}

TEST(LseGradTensorTest, EachSliceMatchesFiniteDifferences) {
  Rng rng(43);
  const Matrix z = rng.normal_matrix(4, 3);
  const LinearParams p{rng.normal_matrix(3, 3)};
  const Tensor3 t = lse_grad_tensor(z, p);
  for (std::size_t j = 0; j < p.theta.rows(); ++j) {
    const Matrix numeric = fd_gradient([&](const Matrix& x) { return lse_seq(linear_forward(x, p))[j]; }, z);
    EXPECT_LE(max_abs_diff(t.slice(j), numeric), 1e-6) << "component " << j;
  }
  EXPECT_THROW(lse_grad_tensor(z, {Matrix::zeros(3, 4)}), DimensionError);
}

TEST(ComposeGeneralGradTest, ReproducesBothCorollaries) {
  Rng rng(44);
  for (int trial = 0; trial < 50; ++trial) {
    const LinearInstance lin = random_linear_instance(rng);
    const Matrix sigma = softmax_seq(linear_forward(lin.z, lin.params));
    const Matrix composed = compose_general_grad(sigma, lin.labels, linear_model_contraction(lin.params.theta));
    EXPECT_LE(max_abs_diff(composed, grad_z_linear(lin.z, lin.params, lin.labels)), 1e-14);

    const QuadInstance q = random_quad_instance(rng);
    const Matrix qs = softmax_seq(quad_forward(q.z, q.params));
    const Matrix qc = compose_general_grad(qs, q.labels, quad_model_contraction(q.z, q.params.theta()));
    EXPECT_LE(max_abs_diff(qc, grad_z_quad(q.z, q.params, q.labels, GradForm::exact)), 1e-14);
  }
}

TEST(ComposeGeneralGradTest, SoftmaxEqualToLabelsGivesZero) {
  Rng rng(45);
  const LabelMatrix c = random_labels(rng, 4, 3);
  EXPECT_EQ(compose_general_grad(c.values(), c, linear_model_contraction(rng.normal_matrix(3, 5))),
            Matrix::zeros(4, 5));
  EXPECT_THROW(compose_general_grad(Matrix::zeros(3, 3), c, linear_model_contraction(Matrix::zeros(3, 5))),
               DimensionError);
}

TEST(FdGradientTest, Examples) {
  Rng rng(46);
  const Matrix z = rng.normal_matrix(3, 4);
  EXPECT_LE(max_abs_diff(fd_gradient([](const Matrix& x) { return frobenius_inner(x, x) / 2.0; }, z, 1e-5), z), 1e-8);
  EXPECT_EQ(fd_gradient([](const Matrix&) { return 3.5; }, z), Matrix::zeros(3, 4));
  EXPECT_THROW(fd_gradient([](const Matrix&) { return 0.0; }, z, 0.0), ValidationError);
}

TEST(FdGradientTest, NonFiniteLossNamesEntry) {
  const Matrix z = Matrix::from_rows({{0.0, 0.0}, {0.0, 1.0}});
  const auto loss = [](const Matrix& x) {
    return x(1, 0) > 0.0 ? std::numeric_limits<double>::infinity() : x(0, 0);
  };
  try {
    fd_gradient(loss, z);
    FAIL() << "expected OracleError";
  } catch (const OracleError& e) {
    EXPECT_EQ(e.row(), 1u);
    EXPECT_EQ(e.col(), 0u);
  }
}

TEST(FdGradientTest, LseSumGradientIsSoftmax) {
  Rng rng(47);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix z = rng.normal_matrix(1 + trial % 6, 1 + trial % 4, 2.0);
    const Matrix numeric = fd_gradient(
        [](const Matrix& x) {
          double s = 0.0;
          for (double v : lse_seq(x)) s += v;
          return s;
        },
        z);
    EXPECT_TRUE(grad_check(softmax_seq(z), numeric, 1e-6, 1e-8).passed);
  }
}

TEST(GradCheckTest, Examples) {
  Rng rng(48);
  const Matrix a = rng.normal_matrix(4, 5);
  const GradReport same = grad_check(a, a);
  EXPECT_TRUE(same.passed);
  EXPECT_EQ(same.max_rel_error, 0.0);

  const double abs_tol = 1e-8;
  EXPECT_TRUE(grad_check(Matrix::zeros(3, 3), Matrix::constant(3, 3, abs_tol / 2.0), 1e-6, abs_tol).passed);

  const Matrix corrupted = a.with_entry(2, 3, 10.0 * a(2, 3));
  const GradReport bad = grad_check(corrupted, a);
  EXPECT_FALSE(bad.passed);
  EXPECT_EQ(bad.worst_entry, (std::pair<std::size_t, std::size_t>{2, 3}));
  EXPECT_NEAR(bad.max_rel_error, 0.9, 1e-12);
  EXPECT_EQ(bad.max_abs_error, std::abs(9.0 * a(2, 3)));
}

TEST(GradCheckTest, RejectsBadInputs) {
  EXPECT_THROW(grad_check(Matrix::zeros(2, 2), Matrix::zeros(2, 3)), DimensionError);
  EXPECT_THROW(grad_check(Matrix::zeros(2, 2), Matrix::zeros(2, 2), 0.0, 1e-8), ValidationError);
  EXPECT_THROW(grad_check(Matrix::zeros(2, 2), Matrix::zeros(2, 2), 1e-6, -1.0), ValidationError);
}

TEST(GradCheckTest, PassedMatchesTolerance) {
  Rng rng(49);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix a = rng.normal_matrix(3, 3);
    const Matrix n = a + rng.normal_matrix(3, 3, std::pow(10.0, -3.0 - 6.0 * rng.uniform()));
    const GradReport r = grad_check(a, n, 1e-6, 1e-8);
    EXPECT_EQ(r.passed, r.max_rel_error <= 1e-6);
  }
}

// Well-conditioned instances with entries drawn from [−2, 2].
TEST(GradCheckTest, VerdictStableAcrossFdSteps) {
  Rng rng(50);
  const auto uniform_matrix = [&](std::size_t r, std::size_t c) {
    return Matrix::generate(r, c, [&](std::size_t, std::size_t) { return 4.0 * rng.uniform() - 2.0; });
  };
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix z = uniform_matrix(4, 3);
    const LinearParams p{uniform_matrix(2, 3)};
    const LabelMatrix c = random_labels(rng, 4, 2);
    const Matrix analytic = grad_z_linear(z, p, c);
    const auto loss = [&](const Matrix& x) { return linear_ce(x, p, c); };
    const bool v4 = grad_check(analytic, fd_gradient(loss, z, 1e-4)).passed;
    const bool v5 = grad_check(analytic, fd_gradient(loss, z, 1e-5)).passed;
    const bool v6 = grad_check(analytic, fd_gradient(loss, z, 1e-6)).passed;
    EXPECT_TRUE(v5);
    EXPECT_EQ(v4, v5);
    EXPECT_EQ(v6, v5);
  }
}

TEST(RandomInstanceTest, SizesWithinBounds) {
  Rng rng(51);
  for (int trial = 0; trial < 200; ++trial) {
    const LinearInstance in = random_linear_instance(rng);
    EXPECT_GE(in.z.rows(), 2u);
    EXPECT_LE(in.z.rows(), 6u);
    EXPECT_LE(in.z.cols(), 8u);
    EXPECT_LE(in.params.theta.rows(), 5u);
  }
}

TEST(RngTest, SubstreamsAreDeterministicAndDistinct) {
  Rng a = Rng::substream(7, "data"), b = Rng::substream(7, "data"), c = Rng::substream(7, "init");
  const auto x = a.next_u64();
  EXPECT_EQ(x, b.next_u64());
  EXPECT_NE(x, c.next_u64());
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

}  // namespace
}  // namespace attnflow

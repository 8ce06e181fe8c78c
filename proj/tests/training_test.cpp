#include <cmath>

#include <gtest/gtest.h>

#include "attnflow/training.hpp"

namespace attnflow {
namespace {

const Dims kDims{4, 8, 4};

Dataset uniform_label_dataset(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> s;
  for (std::size_t i = 0; i < n; ++i) s.push_back({rng.normal_matrix(3, 2), LabelMatrix::uniform(3, 2)});
  return Dataset(std::move(s), {3, 2, 2}, seed);
}

Dataset negated(const Dataset& d) {
  std::vector<Sample> s;
  for (const Sample& x : d.samples()) s.push_back({-x.z0, x.c});
  return Dataset(std::move(s), d.dims(), d.seed());
}

TEST(DatasetTest, Validation) {
  EXPECT_THROW(Dataset({}, {2, 2, 2}, 1), ValidationError);
  std::vector<Sample> bad{{Matrix::zeros(2, 2), LabelMatrix::uniform(2, 2)},
                          {Matrix::zeros(3, 2), LabelMatrix::uniform(3, 2)}};
  EXPECT_THROW(Dataset(bad, {2, 2, 2}, 1), DimensionError);
}

TEST(PlantedTaskTest, DeterministicOneHotAndRealizable) {
  const PlantedTask a = planted_task(kDims, 32, 5), b = planted_task(kDims, 32, 5);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    EXPECT_EQ(a.data[i].z0, b.data[i].z0);
    EXPECT_EQ(a.data[i].c.values(), b.data[i].c.values());
    EXPECT_TRUE(a.data[i].c.strict_one_hot());
  }
  const LayerStack none = LayerStack::shared_linear({Matrix::zeros(4, 8)}, 0, 0.1);
  EXPECT_EQ(accuracy(a.data, none, {a.hidden}), 1.0);
  EXPECT_NE(planted_task(kDims, 32, 6).data[0].z0, a.data[0].z0);
  EXPECT_EQ(planted_task(kDims, 1, 5).data.size(), 1u);
}

TEST(ClassifyTest, Examples) {
  const LinearParams identity{Matrix::identity(1)};
  EXPECT_EQ(classify(Matrix(2, 1, {0.0, 0.0}), identity), std::vector<std::size_t>{0});
  EXPECT_EQ(classify(Matrix(2, 1, {0.0, 5.0}), identity), std::vector<std::size_t>{1});
}

TEST(ClassifyTest, AlignedInstanceRecoversHotPositions) {
  // Z = one-hot rows scaled by 3, readout = identity: logits column f is hot at the label position.
  const std::vector<std::size_t> hot{2, 0, 3};
  const LabelMatrix c = LabelMatrix::one_hot(4, hot);
  EXPECT_EQ(classify(3.0 * c.values(), {Matrix::identity(3)}), hot);
}

TEST(GlobalCeTest, ZeroStackAndReadoutGiveFoLogS) {
  const PlantedTask t = planted_task(kDims, 16, 3);
  const StackParams p = StackParams::initial(kDims, 3, true, 0.1, 0.0, 3);
  EXPECT_NEAR(global_ce(t.data, p), 4.0 * std::log(4.0), 1e-12);
}

TEST(GlobalCeTest, SingleSampleEqualsPointwise) {
  const PlantedTask t = planted_task(kDims, 1, 4);
  const StackParams p = StackParams::initial(kDims, 2, false, 0.1, 0.5, 4);
  Rng rng(9);
  const Matrix readout = rng.normal_matrix(4, 8);
  const StackParams q = p.with_matrices([&] {
    auto m = p.matrices();
    m.back() = readout;
    return m;
  }());
  const Matrix zf = propagate(t.data[0].z0, q.stack(), t.data[0].c);
  EXPECT_EQ(global_ce(t.data, q), linear_ce(zf, {readout}, t.data[0].c));
}

TEST(FdParamGradientTest, StationaryConstructionGivesZero) {
  const Dataset d = uniform_label_dataset(5, 10);
  const StackParams p = StackParams::initial(d.dims(), 2, false, 0.1, 0.0, 10);
  for (const Matrix& g : fd_param_gradient(d, p)) EXPECT_LE(max_abs(g), 1e-10);
}

// At zero readout the logits vanish, so negating every Z₀ negates the readout gradient.
TEST(FdParamGradientTest, ReadoutGradientOddUnderDataNegation) {
  const PlantedTask t = planted_task({3, 4, 2}, 8, 11);
  const StackParams p = StackParams::initial({3, 4, 2}, 0, true, 0.1, 0.0, 11);
  const Matrix g = fd_param_gradient(t.data, p).back();
  const Matrix gn = fd_param_gradient(negated(t.data), p).back();
  EXPECT_LE(max_abs_diff(gn, -g), 1e-10);
  EXPECT_GT(max_abs(g), 1e-3);
}

TEST(FdParamGradientTest, ZeroLayerReadoutMatchesAnalytic) {
  const PlantedTask t = planted_task(kDims, 16, 12);
  StackParams p = StackParams::initial(kDims, 0, true, 0.1, 0.0, 12);
  Rng rng(12);
  p.readout = rng.normal_matrix(4, 8, 0.5);
  const std::vector<Matrix> fd = fd_param_gradient(t.data, p);
  ASSERT_EQ(fd.size(), 1u);
  Matrix mean = Matrix::zeros(4, 8);
  for (const Sample& s : t.data.samples()) mean = mean + grad_theta_linear(s.z0, p.readout_params(), s.c);
  mean = (1.0 / 16.0) * mean;
  EXPECT_TRUE(grad_check(mean, fd.back()).passed);
}

TEST(FdParamGradientTest, LayerGradientMatchesDirectionalDifference) {
  const PlantedTask t = planted_task({3, 4, 2}, 4, 13);
  StackParams p = StackParams::initial({3, 4, 2}, 2, true, 0.2, 0.5, 13);
  Rng rng(13);
  p.readout = rng.normal_matrix(2, 4);
  const std::vector<Matrix> g = fd_param_gradient(t.data, p, 1e-5);
  const Matrix dir = rng.normal_matrix(2, 4);
  const double eps = 1e-4;
  const auto shifted = [&](double s) {
    StackParams q = p;
    q.layers[0] = q.layers[0] + s * dir;
    return global_ce(t.data, q);
  };
  const double numeric = (shifted(eps) - shifted(-eps)) / (2 * eps);
  EXPECT_NEAR(numeric, frobenius_inner(g[0], dir), 1e-6 * (1.0 + std::abs(numeric)));
  EXPECT_THROW(fd_param_gradient(t.data, p, 0.0), ValidationError);
}

TEST(StackParamsTest, LayoutAndNames) {
  const StackParams shared = StackParams::initial(kDims, 4, true, 0.1, 0.1, 1);
  EXPECT_EQ(shared.layers.size(), 1u);
  EXPECT_EQ(shared.parameter_count(), 64u);
  EXPECT_EQ(shared.matrix_name(0), "shared_theta");
  EXPECT_EQ(shared.matrix_name(1), "readout");
  const StackParams free = StackParams::initial(kDims, 2, false, 0.1, 0.1, 1);
  EXPECT_EQ(free.layers.size(), 4u);
  EXPECT_EQ(free.matrix_name(3), "layer 1 theta_label");
  EXPECT_EQ(free.stack().depth(), 2u);
}

TEST(TrainTest, ZeroLearningRateGivesFlatCurve) {
  const PlantedTask t = planted_task(kDims, 16, 14);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 0.0;
  const TrainReport r = train(t.data, StackParams::initial(kDims, 1, true, 0.1, 0.1, 14), cfg);
  ASSERT_EQ(r.loss_curve.size(), 4u);
  for (const auto& pt : r.loss_curve) EXPECT_EQ(pt.value, r.loss_curve.front().value);
  EXPECT_EQ(r.loss_curve.back().epoch, 3u);
}

TEST(TrainTest, ZeroLayerBaselineReachesPerfectAccuracy) {
  const PlantedTask t = planted_task(kDims, 256, 7);
  TrainConfig cfg;
  cfg.epochs = 3000;
  cfg.learning_rate = 64.0;
  const TrainReport r = train(t.data, StackParams::initial(kDims, 0, true, 0.1, 0.1, 7), cfg);
  EXPECT_EQ(r.accuracy_curve.back().value, 1.0);
  EXPECT_LT(r.loss_curve.back().value, r.loss_curve.front().value);
}

TEST(TrainTest, ShallowStackLossDecreases) {
  const PlantedTask t = planted_task(kDims, 32, 15);
  TrainConfig cfg;
  cfg.epochs = 10;
  const TrainReport r = train(t.data, StackParams::initial(kDims, 2, true, 0.1, 0.1, 15), cfg);
  EXPECT_LT(r.loss_curve.back().value, r.loss_curve.front().value);
  EXPECT_EQ(r.accuracy_curve.size(), 11u);
  EXPECT_EQ(r.label_free_accuracy_curve.size(), 11u);
}

TEST(TrainTest, Deterministic) {
  const PlantedTask t = planted_task(kDims, 16, 16);
  TrainConfig cfg;
  cfg.epochs = 5;
  const StackParams p = StackParams::initial(kDims, 2, false, 0.1, 0.1, 16);
  const TrainReport a = train(t.data, p, cfg), b = train(t.data, p, cfg);
  for (std::size_t i = 0; i < a.loss_curve.size(); ++i) EXPECT_EQ(a.loss_curve[i].value, b.loss_curve[i].value);
  EXPECT_EQ(a.final_params.readout, b.final_params.readout);
}

TEST(TrainTest, RegressionEquivalenceEveryEpoch) {
  const PlantedTask t = planted_task(kDims, 32, 17);
  StackParams p = StackParams::initial(kDims, 0, true, 0.1, 0.1, 17);
  for (int epoch = 0; epoch < 10; ++epoch) {
    const Matrix analytic = readout_gradient(t.data, p.stack(), p.readout_params());
    const Matrix fd = fd_param_gradient(t.data, p).back();
    EXPECT_TRUE(grad_check(analytic, fd).passed) << "epoch " << epoch;
    p.readout = p.readout - 4.0 * analytic;
  }
}

TEST(TrainTest, DivergenceRaisesWithPartialReport) {
  const PlantedTask t = planted_task(kDims, 8, 18);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.learning_rate = 1e308;
  try {
    train(t.data, StackParams::initial(kDims, 0, true, 0.1, 0.1, 18), cfg);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_FALSE(e.partial().loss_curve.empty());
  }
  cfg.epochs = 0;
  EXPECT_THROW(train(t.data, StackParams::initial(kDims, 0, true, 0.1, 0.1, 18), cfg), ValidationError);
}

TEST(AccuracyTest, InvariantUnderPositiveReadoutScaling) {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    const PlantedTask t = planted_task(kDims, 8, 100 + trial);
    const StackParams p = StackParams::initial(kDims, 2, true, 0.1, 0.3, 100 + trial);
    const LinearParams readout{rng.normal_matrix(4, 8)};
    const double scale = 0.01 + 100.0 * rng.uniform();
    EXPECT_EQ(accuracy(t.data, p.stack(), readout), accuracy(t.data, p.stack(), {scale * readout.theta}));
  }
}

TEST(GreedyConsistencyTest, ExtraSmallFlowStepDoesNotIncreaseCe) {
  const PlantedTask t = planted_task(kDims, 32, 20);
  const StackParams p = StackParams::initial(kDims, 3, true, 0.1, 0.3, 20);
  Rng rng(20);
  const LinearParams readout{rng.normal_matrix(4, 8)};
  for (const Sample& s : t.data.samples()) {
    const Matrix zf = propagate(s.z0, p.stack(), s.c);
    const Matrix next = zf - 1e-3 * grad_z_linear(zf, readout, s.c);
    EXPECT_LE(linear_ce(next, readout, s.c) - linear_ce(zf, readout, s.c), 1e-10);
  }
}

}  // namespace
}  // namespace attnflow

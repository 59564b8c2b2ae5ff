#include "muso/rf_model.hpp"

#include <gtest/gtest.h>

#include <filesystem>

#include "oracle_helpers.hpp"

using muso::Activation;
using muso::DecisionScheme;
using muso::Index;
using muso::Matrix;
using muso::RFMap;
using muso::SgdConfig;

namespace {

TEST(SampleRfMap, VarianceMatchesMonteCarloCheck) {
  // sigma = 20 -> entry variance 1/400 = 0.0025 within 5% at D*d = 1e6.
  const RFMap map = muso::sample_rf_map(1000, 1000, 20.0, Activation::relu, 1);
  const double mean = map.w.mean();
  const double var = (map.w.array() - mean).square().mean();
  EXPECT_NEAR(var, 0.0025, 0.0025 * 0.05);
}

TEST(SampleRfMap, DeterministicPerSeed) {
  const RFMap a = muso::sample_rf_map(17, 23, 2.0, Activation::tanh, 9);
  const RFMap b = muso::sample_rf_map(17, 23, 2.0, Activation::tanh, 9);
  EXPECT_EQ((a.w - b.w).norm(), 0.0);
  const RFMap c = muso::sample_rf_map(17, 23, 2.0, Activation::tanh, 10);
  EXPECT_GT((a.w - c.w).norm(), 0.0);
}

TEST(SampleRfMap, OverParameterizedShape) {
  const RFMap map = muso::sample_rf_map(784, 5000, 20.0, Activation::relu, 3);
  EXPECT_EQ(map.feature_dim(), 5000);
  EXPECT_EQ(map.input_dim(), 784);
}

TEST(Featurize, ActivationDefinitions) {
  RFMap map;
  map.w = Matrix::Identity(2, 2);
  map.activation = Activation::relu;
  Matrix x(2, 1);
  x << -2.0, 3.0;
  const Matrix z = muso::featurize(map, x);
  EXPECT_DOUBLE_EQ(z(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(z(1, 0), 3.0);

  map.activation = Activation::tanh;
  EXPECT_EQ(muso::featurize(map, Matrix::Zero(2, 3)).norm(), 0.0);
}

TEST(Featurize, MatchesPerSampleLoopOracle) {
  const RFMap map = muso::sample_rf_map(6, 11, 1.5, Activation::cos, 21);
  const Matrix x = oracle::random_matrix(6, 7, 22);
  const Matrix z = muso::featurize(map, x);
  for (Index i = 0; i < 7; ++i) {
    for (Index k = 0; k < 11; ++k) {
      double acc = 0.0;
      for (Index j = 0; j < 6; ++j) acc += map.w(k, j) * x(j, i);
      EXPECT_NEAR(z(k, i), std::cos(acc), 1e-12);
    }
  }
}

TEST(MinnormFit, SingleEquation) {
  Matrix z = Matrix::Zero(3, 1);
  z(0, 0) = 1.0;
  Matrix y(1, 1);
  y << 3.0;
  const Matrix w = muso::minnorm_fit(z, y, Matrix::Zero(3, 1));
  EXPECT_NEAR(w(0, 0), 3.0, 1e-12);
  EXPECT_NEAR(w(1, 0), 0.0, 1e-12);
  EXPECT_NEAR(w(2, 0), 0.0, 1e-12);
}

TEST(MinnormFit, FixedPointWhenAlreadyInterpolating) {
  const Matrix z = oracle::random_matrix(10, 4, 31);
  const Matrix w0 = oracle::random_matrix(10, 2, 32);
  const Matrix y = z.transpose() * w0;
  const Matrix w = muso::minnorm_fit(z, y, w0);
  EXPECT_LT((w - w0).norm() / w0.norm(), 1e-12);
}

TEST(MinnormFit, MatchesConstrainedQpOracle) {
  const Matrix z = oracle::random_matrix(30, 10, 41);
  const Matrix y = oracle::random_matrix(10, 3, 42);
  const Matrix w0 = oracle::random_matrix(30, 3, 43);
  const Matrix w = muso::minnorm_fit(z, y, w0);
  const Matrix w_qp = oracle::min_norm_interpolant_kkt(z, y, w0);
  EXPECT_LT((w - w_qp).norm() / w_qp.norm(), 1e-8);
}

TEST(MinnormFit, InterpolationAndColumnSpaceContracts) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Index d = 20 + static_cast<Index>(seed);
    const Index n = 5 + static_cast<Index>(seed % 5);
    const Matrix z = oracle::random_matrix(d, n, 100 + seed);
    const Matrix y = oracle::random_matrix(n, 2, 200 + seed);
    const Matrix w0 = oracle::random_matrix(d, 2, 300 + seed);
    const Matrix w = muso::minnorm_fit(z, y, w0);
    EXPECT_LT((z.transpose() * w - y).norm() / y.norm(), 1e-8);
    // w - w0 lies in col(Z).
    const Matrix delta = w - w0;
    const Matrix re = oracle::least_squares_projection(z, delta);
    EXPECT_LT((re - delta).norm() / delta.norm(), 1e-8);
  }
}

TEST(MinnormFit, MinimalityAgainstPerturbedInterpolants) {
  const Matrix z = oracle::random_matrix(15, 5, 51);
  const Matrix y = oracle::random_matrix(5, 1, 52);
  const Matrix w0 = oracle::random_matrix(15, 1, 53);
  const Matrix w = muso::minnorm_fit(z, y, w0);
  // Add a col(Z)-orthogonal vector: still interpolates, never closer to w0.
  for (std::uint64_t s = 0; s < 20; ++s) {
    Matrix v = oracle::random_matrix(15, 1, 60 + s);
    v -= oracle::least_squares_projection(z, v);
    const Matrix w_other = w + v;
    EXPECT_LT((z.transpose() * w_other - y).norm() / y.norm(), 1e-8);
    EXPECT_GE((w_other - w0).norm() + 1e-12, (w - w0).norm());
  }
}

TEST(MinnormFit, SingularGramThrowsWithoutLambda) {
  Matrix z(4, 2);
  z.col(0) = oracle::random_matrix(4, 1, 71);
  z.col(1) = z.col(0);
  const Matrix y = oracle::random_matrix(2, 1, 72);
  EXPECT_THROW(muso::minnorm_fit(z, y, Matrix::Zero(4, 1)), muso::SingularMatrixError);
  EXPECT_NO_THROW(muso::minnorm_fit(z, Matrix::Ones(2, 1), Matrix::Zero(4, 1), 1e-8));
}

TEST(SgdFit, SingleEquationConverges) {
  Matrix z = Matrix::Zero(3, 1);
  z(0, 0) = 1.0;
  Matrix y(1, 1);
  y << 3.0;
  SgdConfig cfg;
  cfg.learning_rate = 0.4;
  cfg.epochs = 100;
  cfg.batch_size = 1;
  const Matrix w = muso::sgd_fit(z, y, Matrix::Zero(3, 1), cfg);
  EXPECT_NEAR(w(0, 0), 3.0, 1e-6);
  EXPECT_DOUBLE_EQ(w(1, 0), 0.0);
}

TEST(SgdFit, StationaryAtInterpolation) {
  const Matrix z = oracle::random_matrix(8, 3, 81);
  const Matrix w0 = oracle::random_matrix(8, 2, 82);
  const Matrix y = z.transpose() * w0;
  SgdConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.epochs = 10;
  cfg.batch_size = 3;
  const Matrix w = muso::sgd_fit(z, y, w0, cfg);
  EXPECT_LT((w - w0).norm(), 1e-12);
}

TEST(SgdFit, ConvergesToMinnormSolution) {
  // Implicit bias: plain GD from w0 lands on the minimum-distance interpolant.
  const Matrix z = oracle::random_gaussian(200, 40, 91);
  const Matrix y = oracle::random_matrix(40, 1, 92);
  const Matrix w0 = oracle::random_matrix(200, 1, 93);
  const Matrix w_star = muso::minnorm_fit(z, y, w0);

  Eigen::SelfAdjointEigenSolver<Matrix> eig(z.transpose() * z);
  const double lr = 40.0 / (eig.eigenvalues().maxCoeff() + eig.eigenvalues().minCoeff());
  SgdConfig cfg;
  cfg.learning_rate = lr;
  cfg.epochs = 20000;
  cfg.batch_size = 40;
  cfg.shuffle = false;
  const Matrix w = muso::sgd_fit(z, y, w0, cfg);
  EXPECT_LT((w - w_star).norm() / w_star.norm(), 1e-3);
}

TEST(SgdFit, DivergenceDetected) {
  const Matrix z = oracle::random_gaussian(20, 10, 95);
  const Matrix y = oracle::random_matrix(10, 1, 96);
  SgdConfig cfg;
  cfg.learning_rate = 10.0;  // way past stability
  cfg.epochs = 50;
  cfg.batch_size = 10;
  EXPECT_THROW(muso::sgd_fit(z, y, Matrix::Zero(20, 1), cfg), muso::DivergenceError);
}

TEST(Decide, SignConventionAndTies) {
  Matrix outputs(2, 1);
  outputs << 0.0, -0.5;
  const auto pm = muso::decide(outputs, DecisionScheme::pm_one);
  EXPECT_EQ(pm[0], 1);  // sign(0) -> +1 by convention
  EXPECT_EQ(pm[1], 0);

  Matrix scores(1, 3);
  scores << 0.2, 0.9, 0.9;
  const auto onehot = muso::decide(scores, DecisionScheme::one_hot);
  EXPECT_EQ(onehot[0], 1);  // lowest-index tie-break
}

TEST(Decide, InterpolatingHeadReproducesTrainLabels) {
  const RFMap map = muso::sample_rf_map(5, 60, 1.0, Activation::tanh, 7);
  const Matrix x = oracle::random_matrix(5, 12, 8);
  const Matrix z = muso::featurize(map, x);
  std::vector<int> labels = {0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2};
  Matrix y = Matrix::Zero(12, 3);
  for (Index i = 0; i < 12; ++i) y(i, labels[static_cast<std::size_t>(i)]) = 1.0;
  const Matrix w = muso::minnorm_fit(z, y, Matrix::Zero(60, 3));
  const auto decided = muso::decide(muso::predict(w, z), DecisionScheme::one_hot);
  EXPECT_EQ(decided, labels);
}

TEST(Weights, SaveLoadRoundTrip) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "muso_rf_test";
  fs::create_directories(dir);
  const Matrix w = oracle::random_matrix(7, 3, 99);
  muso::save_weights(w, (dir / "w.bin").string());
  const Matrix back = muso::load_weights((dir / "w.bin").string());
  EXPECT_EQ((back - w).norm(), 0.0);
}

}  // namespace

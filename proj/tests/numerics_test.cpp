#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "jointq/numerics.hpp"

namespace jointq {
namespace {

MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = normal(rng);
  return m;
}

TEST(AffineTest, IdentityLayer) {
  AffineLayer<double> layer{MatrixXd::Identity(2, 2), MatrixXd::Zero(2, 1)};
  MatrixXd x(2, 1);
  x << 3, -1;
  EXPECT_EQ(affine_forward(layer, x), x);
}

TEST(AffineTest, HandArithmetic) {
  AffineLayer<double> layer{MatrixXd(2, 2), MatrixXd(2, 1)};
  layer.weight << 1, 2, 0, 1;
  layer.bias << 1, 0;
  MatrixXd x(2, 1);
  x << 1, 1;
  const MatrixXd y = affine_forward(layer, x);
  EXPECT_DOUBLE_EQ(y(0), 4.0);
  EXPECT_DOUBLE_EQ(y(1), 1.0);
}

TEST(AffineTest, WrongInputLengthThrows) {
  AffineLayer<double> layer{MatrixXd::Identity(2, 3), MatrixXd::Zero(2, 1)};
  EXPECT_THROW(affine_forward(layer, MatrixXd::Ones(2, 1)), ShapeError);
  EXPECT_THROW(affine_backward(layer, MatrixXd::Ones(3, 1), MatrixXd::Ones(3, 1)), ShapeError);
}

TEST(AffineTest, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(1);
  const auto layer = AffineLayer<double>::glorot(4, 3, rng);
  const auto g = affine_backward(layer, random_matrix(4, 2, rng), MatrixXd::Zero(3, 2));
  EXPECT_TRUE(g.grad_weight.isZero(0));
  EXPECT_TRUE(g.grad_bias.isZero(0));
  EXPECT_TRUE(g.grad_x.isZero(0));
}

TEST(AffineTest, IdentityWeightPassesUpstream) {
  AffineLayer<double> layer{MatrixXd::Identity(3, 3), MatrixXd::Zero(3, 1)};
  std::mt19937_64 rng(2);
  const MatrixXd u = random_matrix(3, 1, rng);
  EXPECT_EQ(affine_backward(layer, random_matrix(3, 1, rng), u).grad_x, u);
}

TEST(AffineTest, BatchedBackwardSumsOverColumns) {
  std::mt19937_64 rng(3);
  const auto layer = AffineLayer<double>::glorot(3, 2, rng);
  const MatrixXd x = random_matrix(3, 4, rng);
  const MatrixXd u = random_matrix(2, 4, rng);
  const auto batched = affine_backward(layer, x, u);
  MatrixXd gw = MatrixXd::Zero(2, 3);
  MatrixXd gb = MatrixXd::Zero(2, 1);
  for (int b = 0; b < 4; ++b) {
    const auto one = affine_backward(layer, x.col(b), u.col(b));
    gw += one.grad_weight;
    gb += one.grad_bias;
    EXPECT_TRUE(batched.grad_x.col(b).isApprox(one.grad_x, 1e-14));
  }
  EXPECT_TRUE(batched.grad_weight.isApprox(gw, 1e-14));
  EXPECT_TRUE(batched.grad_bias.isApprox(gb, 1e-14));
}

// Loss = <c, layer(x)> for a fixed random c; analytic gradient against the
// finite-difference oracle over 20 random shapes.
TEST(AffineTest, MatchesFiniteDifferencesOnRandomShapes) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dim(1, 7);
    const int in = dim(rng), out = dim(rng), batch = dim(rng);
    ParameterSet<double> params;
    params.add("layer", AffineLayer<double>::glorot(in, out, rng));
    params.value("layer.bias") = random_matrix(out, 1, rng);
    const MatrixXd x = random_matrix(in, batch, rng);
    const MatrixXd c = random_matrix(out, batch, rng);
    const std::function<double(const ParameterSet<double>&)> loss = [&](const ParameterSet<double>& p) {
      return (affine_forward(p.layer("layer"), x).array() * c.array()).sum();
    };
    params.accumulate("layer", affine_backward(params.layer("layer"), x, c));
    const auto estimate = finite_difference_gradient(loss, params, 1e-5);
    const auto result = compare_gradients(params.grads(), estimate);
    EXPECT_LT(result.max_relative_error, 1e-4) << "seed " << seed << " " << result.worst_parameter;
    EXPECT_GT(result.checked, 0u);
  }
}

TEST(SigmoidTest, Values) {
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(40.0), 1.0, 1e-12);
  EXPECT_NEAR(sigmoid(1e6), 1.0, 1e-12);
  EXPECT_GT(sigmoid(-1e6), 0.0);
  MatrixXd y(1, 1);
  y << 0.5;
  EXPECT_DOUBLE_EQ(sigmoid_backward(y, MatrixXd::Ones(1, 1))(0), 0.25);
}

TEST(SigmoidTest, OutputsStrictlyInsideUnitInterval) {
  std::mt19937_64 rng(4);
  const MatrixXd y = sigmoid_forward(MatrixXd(random_matrix(5, 40, rng) * 8.0));
  EXPECT_GT(y.minCoeff(), 0.0);
  EXPECT_LT(y.maxCoeff(), 1.0);
}

TEST(SigmoidTest, BackwardMatchesCentralDifference) {
  for (double z : {-5.0, -0.3, 0.0, 1.7, 8.0}) {
    const double h = 1e-6;
    const double fd = (sigmoid(z + h) - sigmoid(z - h)) / (2 * h);
    MatrixXd y(1, 1);
    y << sigmoid(z);
    EXPECT_NEAR(sigmoid_backward(y, MatrixXd::Ones(1, 1))(0), fd, 1e-9) << z;
  }
}

TEST(ReluTest, ForwardAndBackward) {
  MatrixXd x(2, 1);
  x << -1, 2;
  const MatrixXd y = relu_forward(x);
  EXPECT_EQ(y(0), 0.0);
  EXPECT_EQ(y(1), 2.0);
  const MatrixXd g = relu_backward(x, MatrixXd::Ones(2, 1));
  EXPECT_EQ(g(0), 0.0);
  EXPECT_EQ(g(1), 1.0);
}

TEST(ReluTest, AllNegativeInput) {
  const MatrixXd x = -MatrixXd::Ones(3, 2);
  EXPECT_TRUE(relu_forward(x).isZero(0));
  EXPECT_TRUE(relu_backward(x, MatrixXd::Ones(3, 2)).isZero(0));
}

TEST(ReluTest, MatchesFiniteDifferencesAwayFromZero) {
  std::mt19937_64 rng(5);
  const MatrixXd x = random_matrix(6, 5, rng);
  const MatrixXd c = random_matrix(6, 5, rng);
  const MatrixXd analytic = relu_backward(x, c);
  const double h = 1e-6;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    if (std::abs(x.data()[k]) < 10 * h) continue;
    MatrixXd plus = x, minus = x;
    plus.data()[k] += h;
    minus.data()[k] -= h;
    const double fd = ((relu_forward(plus) - relu_forward(minus)).array() * c.array()).sum() / (2 * h);
    EXPECT_NEAR(analytic.data()[k], fd, 1e-8);
  }
}

TEST(SgdTest, ZeroGradientLeavesParameters) {
  std::mt19937_64 rng(6);
  ParameterSet<double> p;
  p.add("w", random_matrix(3, 2, rng));
  const auto before = p.value("w");
  sgd_step(p, 0.1);
  EXPECT_EQ(p.value("w"), before);
}

TEST(SgdTest, Arithmetic) {
  ParameterSet<double> p;
  p.add("w", MatrixXd::Constant(1, 1, 1.0));
  p.grad("w")(0) = 2.0;
  sgd_step(p, 0.1);
  EXPECT_DOUBLE_EQ(p.value("w")(0), 0.8);
  EXPECT_EQ(p.grad("w")(0), 0.0);
}

TEST(SgdTest, ZeroLearningRateIsIdentity) {
  std::mt19937_64 rng(7);
  ParameterSet<double> p;
  p.add("w", random_matrix(4, 4, rng));
  p.grad("w") = random_matrix(4, 4, rng);
  const auto before = p.value("w");
  sgd_step(p, 0.0);
  EXPECT_EQ(p.value("w"), before);
}

TEST(SgdTest, NanGradientNamesParameter) {
  ParameterSet<double> p;
  p.add("trunk.0.weight", MatrixXd::Zero(2, 2));
  p.grad("trunk.0.weight")(1, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    sgd_step(p, 0.1);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("trunk.0.weight"), std::string::npos);
  }
}

TEST(FiniteDifferenceTest, QuadraticLossRecoversParameters) {
  std::mt19937_64 rng(8);
  ParameterSet<double> p;
  p.add("a", random_matrix(3, 2, rng));
  p.add("b", random_matrix(1, 4, rng));
  const std::function<double(const ParameterSet<double>&)> loss = [](const ParameterSet<double>& q) {
    double s = 0.0;
    for (const auto& [name, v] : q.values()) s += 0.5 * v.squaredNorm();
    return s;
  };
  const auto g = finite_difference_gradient(loss, p, 1e-5);
  for (const auto& [name, v] : p.values()) EXPECT_TRUE((g.at(name) - v).cwiseAbs().maxCoeff() < 1e-6) << name;
}

TEST(FiniteDifferenceTest, ConstantLossIsZero) {
  ParameterSet<double> p;
  p.add("a", MatrixXd::Ones(2, 2));
  const std::function<double(const ParameterSet<double>&)> loss = [](const ParameterSet<double>&) { return 3.0; };
  EXPECT_TRUE(finite_difference_gradient(loss, p, 1e-4).at("a").isZero(0));
}

TEST(FiniteDifferenceTest, RejectsNondeterministicLoss) {
  ParameterSet<double> p;
  p.add("a", MatrixXd::Ones(1, 1));
  int calls = 0;
  const std::function<double(const ParameterSet<double>&)> loss = [&calls](const ParameterSet<double>&) {
    return static_cast<double>(++calls);
  };
  EXPECT_THROW(finite_difference_gradient(loss, p, 1e-4), NumericError);
}

TEST(FiniteDifferenceTest, RejectsEpsilonOutOfRange) {
  ParameterSet<double> p;
  p.add("a", MatrixXd::Ones(1, 1));
  const std::function<double(const ParameterSet<double>&)> loss = [](const ParameterSet<double>&) { return 0.0; };
  EXPECT_THROW(finite_difference_gradient(loss, p, 1e-2), std::invalid_argument);
  EXPECT_THROW(finite_difference_gradient(loss, p, 1e-9), std::invalid_argument);
}

TEST(InitTest, GlorotBoundsAndZeroBias) {
  std::mt19937_64 rng(9);
  const auto layer = AffineLayer<double>::glorot(158, 64, rng);
  const double bound = std::sqrt(6.0 / (158 + 64));
  EXPECT_LE(layer.weight.cwiseAbs().maxCoeff(), bound);
  EXPECT_TRUE(layer.bias.isZero(0));
}

}  // namespace
}  // namespace jointq

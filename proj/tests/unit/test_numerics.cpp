#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "mlma/error.hpp"
#include "mlma/grad_check.hpp"
#include "mlma/ops.hpp"
#include "mlma/tensor.hpp"
#include "test_util.hpp"

namespace mlma {
namespace {

using testing::random_tensor;
using Td = Tensor<double>;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Td({2, 3}, std::vector<double>(5)), DimensionError);
  Td t({2, 3}, std::vector<double>(6, 1.0));
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.dtype(), DType::kFloat64);
  EXPECT_EQ(Tensor<float>::zeros({1}).dtype(), DType::kFloat32);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Td eye({2, 2}, {1, 0, 0, 1});
  Td m({2, 2}, {1, 2, 3, 4});
  const auto y = matmul(eye, m);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, HandExpansion) {
  const auto y = matmul(Td({2, 2}, {1, 2, 3, 4}), Td({2, 1}, {5, 6}));
  ASSERT_EQ(y.shape(), (Shape{2, 1}));
  EXPECT_EQ(y.data()[0], 17.0);
  EXPECT_EQ(y.data()[1], 39.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Td::zeros({2, 3}), Td::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
  }
}

TEST(Matmul, GradientOfSumWithOnesIsColumnCount) {
  std::mt19937_64 rng(1);
  auto a = random_tensor<double>({3, 4}, rng, -1, 1, true);
  Td b = Td::full({4, 5}, 1.0);
  backward(sum(matmul(a, b)));
  for (double g : a.grad()) EXPECT_DOUBLE_EQ(g, 5.0);
  // Finite-difference oracle agrees.
  std::vector<Td> inputs{a};
  const auto r = grad_check([&] { return sum(matmul(inputs[0], b)); }, inputs, 1e-4);
  EXPECT_LT(r.max_rel_error, 1e-8) << describe(r);
}

TEST(Elementwise, AnalyticValues) {
  EXPECT_NEAR(softplus(Td::scalar(0.0)).item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(std::log(2.0), 0.6931472, 1e-7);
  EXPECT_DOUBLE_EQ(sigmoid(Td::scalar(0.0)).item(), 0.5);
  EXPECT_DOUBLE_EQ(silu(Td::scalar(0.0)).item(), 0.0);
  EXPECT_NEAR(exp(Td::scalar(1.0)).item(), std::numbers::e, 1e-15);
}

TEST(Elementwise, GeluDerivativeMatchesCentralDifference) {
  const double x = 0.7, h = 1e-5;
  auto in = Td::scalar(x, true);
  backward(gelu(in));
  const double numeric = (math::gelu(x + h) - math::gelu(x - h)) / (2 * h);
  EXPECT_NEAR(in.grad()[0], numeric, 1e-6);
}

TEST(Elementwise, LogOfNonPositiveNamesIndex) {
  try {
    log(Td({3}, {1.0, 2.0, -1.0}));
    FAIL() << "expected DomainError";
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("index 2"), std::string::npos);
  }
}

TEST(Elementwise, EveryFunctionPassesGradCheck) {
  std::mt19937_64 rng(2);
  for (auto f : {Unary::kSoftplus, Unary::kSilu, Unary::kGelu, Unary::kSigmoid, Unary::kExp, Unary::kLog}) {
    const double lo = f == Unary::kLog ? 0.2 : -2.0;
    std::vector<Td> inputs{random_tensor<double>({3, 4}, rng, lo, 2.0)};
    const auto r = grad_check([&] { return elementwise(f, inputs[0]); }, inputs);
    EXPECT_LT(r.max_rel_error, 1e-4) << to_string(f) << ": " << describe(r);
  }
}

TEST(LayerNorm, ConstantRowsBecomeZero) {
  const auto y = layer_norm(Td::full({2, 5}, 3.0), Td::full({5}, 1.0), Td::zeros({5}), 1e-5);
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(LayerNorm, RowsHaveZeroMeanUnitVariance) {
  std::mt19937_64 rng(3);
  const auto x = random_tensor<double>({20, 16}, rng, -3, 3);
  const auto y = layer_norm(x, Td::full({16}, 1.0), Td::zeros({16}), 1e-5);
  for (std::size_t r = 0; r < 20; ++r) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < 16; ++j) mu += y.at(r, j) / 16;
    for (std::size_t j = 0; j < 16; ++j) var += (y.at(r, j) - mu) * (y.at(r, j) - mu) / 16;
    EXPECT_LE(std::abs(mu), 1e-6);
    EXPECT_NEAR(var, 1.0, 1e-3);
  }
}

TEST(LayerNorm, GradCheck) {
  std::mt19937_64 rng(4);
  std::vector<Td> inputs{random_tensor<double>({4, 6}, rng), random_tensor<double>({6}, rng, 0.5, 1.5),
                         random_tensor<double>({6}, rng)};
  const auto r = grad_check([&] { return layer_norm(inputs[0], inputs[1], inputs[2], 1e-5); }, inputs);
  EXPECT_LT(r.max_rel_error, 1e-4) << describe(r);
}

TEST(Conv1dDepthwise, DeltaKernelIsIdentity) {
  std::mt19937_64 rng(5);
  const auto x = random_tensor<double>({7, 3}, rng);
  Td kernel({4, 3}, {1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0});
  EXPECT_EQ(testing::max_abs_diff(conv1d_depthwise(x, kernel, true), x), 0.0);
}

TEST(Conv1dDepthwise, ImpulseResponseIsKernel) {
  // Direct convolution definition: y[t] = sum_j w[j] x[t - j] with x = delta[0].
  std::vector<double> impulse(6 * 2, 0.0);
  impulse[0] = impulse[1] = 1.0;
  Td kernel({4, 2}, {1, 5, 2, 6, 3, 7, 4, 8});
  const auto y = conv1d_depthwise(Td({6, 2}, impulse), kernel, true);
  const std::vector<double> want{1, 5, 2, 6, 3, 7, 4, 8, 0, 0, 0, 0};
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), want);
}

TEST(Conv1dDepthwise, CausalOutputsIgnoreFuturePerturbations) {
  std::mt19937_64 rng(6);
  const auto x = random_tensor<double>({9, 4}, rng);
  const auto w = random_tensor<double>({4, 4}, rng);
  const auto base = conv1d_depthwise(x, w, true);
  for (std::size_t t = 0; t < 9; ++t) {
    auto perturbed = x.detach();
    for (std::size_t c = 0; c < 4; ++c) perturbed.mutable_data()[t * 4 + c] += 1.0;
    const auto y = conv1d_depthwise(perturbed, w, true);
    for (std::size_t s = 0; s < t; ++s)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(y.at(s, c), base.at(s, c));
  }
}

TEST(Conv1dDepthwise, KernelLongerThanSequenceIsPurePadding) {
  Td x({2, 1}, {1.0, 2.0});
  Td w({5, 1}, {1, 1, 1, 1, 1});
  const auto y = conv1d_depthwise(x, w, true);
  EXPECT_EQ(y.data()[0], 1.0);
  EXPECT_EQ(y.data()[1], 3.0);
}

TEST(Conv1dDepthwise, GradCheckBothModes) {
  std::mt19937_64 rng(7);
  for (bool causal : {true, false}) {
    std::vector<Td> inputs{random_tensor<double>({6, 3}, rng), random_tensor<double>({5, 3}, rng)};
    const auto r = grad_check([&] { return conv1d_depthwise(inputs[0], inputs[1], causal); }, inputs);
    EXPECT_LT(r.max_rel_error, 1e-4) << describe(r);
  }
}

TEST(Conv2d, GradCheck) {
  std::mt19937_64 rng(8);
  std::vector<Td> inputs{random_tensor<double>({5, 6, 2}, rng), random_tensor<double>({3, 3, 2, 3}, rng),
                         random_tensor<double>({3}, rng)};
  const auto r = grad_check([&] { return conv2d(inputs[0], inputs[1], inputs[2], 2, 1); }, inputs);
  EXPECT_LT(r.max_rel_error, 1e-4) << describe(r);
}

TEST(Conv2d, OutputExtentFollowsStrideFormula) {
  const auto y = conv2d(Td::zeros({16, 80, 1}), Td::zeros({3, 3, 1, 2}), Td::zeros({2}), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{8, 40, 2}));
}

TEST(Logsumexp, AnalyticCases) {
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_NEAR(logsumexp(Td({2}, {0.0, 0.0}), 0).item(), std::log(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(logsumexp(Td({2}, {-inf, 1.5}), 0).item(), 1.5);
  EXPECT_NEAR(logsumexp(Td({2}, {1000.0, 1000.0}), 0).item(), 1000.0 + std::log(2.0), 1e-12);
  EXPECT_EQ(logsumexp(Td({2}, {-inf, -inf}), 0).item(), -inf);
}

TEST(Logsumexp, BoundedByMaxAndMaxPlusLogN) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 9;
    const auto x = random_tensor<double>({n}, rng, -50, 50);
    const double m = *std::max_element(x.data().begin(), x.data().end());
    const double v = logsumexp(x, 0).item();
    EXPECT_GE(v, m);
    EXPECT_LE(v, m + std::log(static_cast<double>(n)) + 1e-12);
  }
}

TEST(Logsumexp, AxisReductionAndGradient) {
  std::mt19937_64 rng(10);
  std::vector<Td> inputs{random_tensor<double>({3, 4, 2}, rng)};
  EXPECT_EQ(logsumexp(inputs[0], 1).shape(), (Shape{3, 2}));
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const auto r = grad_check([&] { return logsumexp(inputs[0], axis); }, inputs);
    EXPECT_LT(r.max_rel_error, 1e-4) << describe(r);
  }
}

TEST(LogSoftmax, RowsNormalizeAndGradCheck) {
  std::mt19937_64 rng(11);
  std::vector<Td> inputs{random_tensor<double>({4, 5}, rng, -3, 3)};
  const auto y = log_softmax(inputs[0]);
  for (std::size_t r = 0; r < 4; ++r) {
    double z = 0;
    for (std::size_t k = 0; k < 5; ++k) z += std::exp(y.at(r, k));
    EXPECT_NEAR(z, 1.0, 1e-12);
  }
  const auto res = grad_check([&] { return log_softmax(inputs[0]); }, inputs);
  EXPECT_LT(res.max_rel_error, 1e-4) << describe(res);
}

TEST(ShapeOps, GradCheck) {
  std::mt19937_64 rng(12);
  std::vector<Td> inputs{random_tensor<double>({4, 6}, rng), random_tensor<double>({6}, rng),
                         random_tensor<double>({4, 1}, rng), random_tensor<double>({4, 6}, rng)};
  const auto f = [&] {
    auto a = add_bias(inputs[0], inputs[1]);
    auto b = mul(expand_cols(inputs[2], 6), inputs[3]);
    auto c = sub(reverse_rows(a), scale(b, 0.5));
    return add(glu(c), slice_cols(c, 1, 4).reshape({4, 3}));
  };
  const auto r = grad_check(f, inputs);
  EXPECT_LT(r.max_rel_error, 1e-4) << describe(r);
}

TEST(Backward, NonScalarLossIsContractError) {
  auto x = Td::full({2}, 1.0, true);
  EXPECT_THROW(backward(scale(x, 2.0)), ContractError);
}

TEST(Backward, FanOutAccumulatesExactlyTwice) {
  std::mt19937_64 rng(13);
  auto x1 = random_tensor<double>({5}, rng, -1, 1, true);
  auto x2 = x1.detach();
  x2.set_requires_grad(true);
  backward(sum(gelu(x1)));
  backward(sum(add(gelu(x2), gelu(x2))));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(x2.grad()[i], 2.0 * x1.grad()[i]);
}

TEST(Tape, OrdersOpsTopologicallyAndVisitsEachOnce) {
  auto x = Td::full({3}, 0.5, true);
  auto y = gelu(x);
  auto z = add(y, y);
  auto loss = sum(mul(z, y));
  Tape<double> tape(loss);
  ASSERT_EQ(tape.size(), 4u);  // gelu, add, mul, sum
  for (std::size_t i = 1; i < tape.size(); ++i) EXPECT_LT(tape.ops()[i - 1]->seq, tape.ops()[i]->seq);
}

TEST(GradCheck, LinearMapIsExact) {
  std::mt19937_64 rng(14);
  const auto w = random_tensor<double>({6}, rng);
  std::vector<Td> inputs{random_tensor<double>({6}, rng)};
  const auto r = grad_check([&] { return sum(mul(inputs[0], w)); }, inputs, 1e-3);
  EXPECT_LE(r.max_rel_error, 1e-10) << describe(r);
}

TEST(GradCheck, RejectsEpsOutsideRange) {
  std::vector<Td> inputs{Td::full({1}, 1.0)};
  EXPECT_THROW(grad_check([&] { return sum(inputs[0]); }, inputs, 1e-2), ContractError);
}

TEST(Dropout, EvalIsIdentityAndTrainIsInverted) {
  std::mt19937_64 rng(15);
  const auto x = Td::full({1000}, 1.0);
  EXPECT_EQ(dropout(x, 0.1, rng, false).node(), x.node());
  const auto y = dropout(x, 0.5, rng, true);
  double total = 0;
  for (double v : y.data()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    total += v;
  }
  EXPECT_NEAR(total / 1000.0, 1.0, 0.15);
}

TEST(Determinism, IdenticalInputsGiveBitIdenticalOutputs) {
  std::mt19937_64 a(16), b(16);
  const auto xa = random_tensor<float>({8, 8}, a);
  const auto xb = random_tensor<float>({8, 8}, b);
  const auto ya = log_softmax(matmul(gelu(xa), xa));
  const auto yb = log_softmax(matmul(gelu(xb), xb));
  EXPECT_EQ(testing::max_abs_diff(ya, yb), 0.0);
}

TEST(NoGrad, GuardSuppressesRecording) {
  auto x = Td::full({2}, 1.0, true);
  NoGradGuard guard;
  EXPECT_FALSE(gelu(x).requires_grad());
}

}  // namespace
}  // namespace mlma

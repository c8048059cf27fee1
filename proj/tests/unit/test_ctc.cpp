#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "mlma/ctc.hpp"
#include "mlma/error.hpp"
#include "mlma/grad_check.hpp"
#include "mlma/ops.hpp"
#include "test_util.hpp"

namespace mlma::ctc {
namespace {

using testing::random_lattice;
using Td = Tensor<double>;
constexpr double kInf = std::numeric_limits<double>::infinity();

// One-hot log lattice spelling `path` (0 on the path, -inf elsewhere).
Td one_hot(const std::vector<TokenId>& path, std::size_t vocab) {
  std::vector<double> data(path.size() * vocab, -kInf);
  for (std::size_t t = 0; t < path.size(); ++t) data[t * vocab + static_cast<std::size_t>(path[t])] = 0.0;
  return Td({path.size(), vocab}, std::move(data));
}

TEST(ExpandTarget, InterleavesBlanks) {
  const std::vector<TokenId> target{3, 4};
  EXPECT_EQ(expand_target(target), (std::vector<TokenId>{0, 3, 0, 4, 0}));
  EXPECT_EQ(expand_target({}), (std::vector<TokenId>{0}));
}

TEST(CtcLoss, SingleFrameSinglePath) {
  std::mt19937_64 rng(101);
  const auto lp = random_lattice(1, 4, rng);
  EXPECT_NEAR(ctc_loss(lp, std::vector<TokenId>{2}), -lp.at(0, 2), 1e-15);
}

TEST(CtcLoss, TwoFramesUniformIsLog3) {
  const double l = std::log(1.0 / 3.0);
  Td lp({2, 3}, {l, l, l, l, l, l});
  const std::vector<TokenId> target{1};
  EXPECT_NEAR(ctc_loss(lp, target), std::log(3.0), 1e-12);
  EXPECT_NEAR(brute_force_ctc(lp, target), std::log(3.0), 1e-12);
}

TEST(CtcLoss, EmptyTargetIsAllBlank) {
  std::mt19937_64 rng(102);
  const auto lp = random_lattice(2, 3, rng);
  const double want = -(lp.at(0, 0) + lp.at(1, 0));
  EXPECT_NEAR(ctc_loss(lp, std::vector<TokenId>{}), want, 1e-14);
  EXPECT_NEAR(brute_force_ctc(lp, std::vector<TokenId>{}), want, 1e-14);
}

TEST(CtcLoss, MatchesBruteForceOnRandomInstances) {
  std::mt19937_64 rng(103);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t V = std::uniform_int_distribution<std::size_t>(2, 5)(rng);
    const std::size_t T = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
    std::vector<TokenId> target;
    const std::size_t L = std::uniform_int_distribution<std::size_t>(0, 3)(rng);
    for (std::size_t i = 0; i < L; ++i) {
      target.push_back(std::uniform_int_distribution<TokenId>(1, static_cast<TokenId>(V - 1))(rng));
    }
    while (required_frames(target) > T) target.pop_back();
    const auto lp = random_lattice(T, V, rng);
    const double dp = ctc_loss(lp, target);
    const double bf = brute_force_ctc(lp, target);
    ASSERT_LT(std::abs(dp - bf), 1e-5) << "T=" << T << " V=" << V << " L=" << target.size();
    ASSERT_GE(dp, 0.0);
  }
}

TEST(CtcLoss, InfeasibleTargetIsError) {
  std::mt19937_64 rng(104);
  // [a, a] needs a separating blank: 3 frames.
  EXPECT_THROW(ctc_loss(random_lattice(2, 3, rng), std::vector<TokenId>{1, 1}), InfeasibleTargetError);
  EXPECT_NO_THROW(ctc_loss(random_lattice(3, 3, rng), std::vector<TokenId>{1, 1}));
  EXPECT_THROW(ctc_loss(random_lattice(1, 3, rng), std::vector<TokenId>{1, 2}), InfeasibleTargetError);
}

TEST(CtcLoss, BlankOrOutOfRangeTargetIsError) {
  std::mt19937_64 rng(105);
  EXPECT_THROW(ctc_loss(random_lattice(4, 3, rng), std::vector<TokenId>{0}), ValidationError);
  EXPECT_THROW(ctc_loss(random_lattice(4, 3, rng), std::vector<TokenId>{3}), ValidationError);
}

TEST(CtcLoss, DeterministicPathHasZeroLoss) {
  const std::vector<TokenId> path{0, 1, 1, 0, 2, 0};
  const auto lp = one_hot(path, 3);
  const std::vector<TokenId> target{1, 2};
  EXPECT_NEAR(ctc_loss(lp, target), 0.0, 1e-12);
  EXPECT_NEAR(brute_force_ctc(lp, target), 0.0, 1e-12);
}

TEST(BruteForce, RefusesOverBudget) {
  std::mt19937_64 rng(106);
  EXPECT_THROW(brute_force_ctc(random_lattice(12, 5, rng), std::vector<TokenId>{1}), BudgetError);
}

TEST(CtcGrad, RowsSumToZero) {
  std::mt19937_64 rng(107);
  const auto lp = random_lattice(7, 5, rng);
  const auto g = ctc_grad(lp, std::vector<TokenId>{1, 3, 3});
  for (std::size_t t = 0; t < 7; ++t) {
    double s = 0;
    for (std::size_t k = 0; k < 5; ++k) s += g.at(t, k);
    EXPECT_LE(std::abs(s), 1e-6);
  }
}

TEST(CtcGrad, MatchesFiniteDifferencesOfLogits) {
  std::mt19937_64 rng(108);
  const auto logits = testing::random_tensor<double>({5, 4}, rng, -2, 2);
  const std::vector<TokenId> target{2, 3};
  const auto g = ctc_grad(logits, target);
  const double h = 1e-6;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    auto up = logits.detach(), down = logits.detach();
    up.mutable_data()[i] += h;
    down.mutable_data()[i] -= h;
    const double numeric = (ctc_loss(log_softmax(up), target) - ctc_loss(log_softmax(down), target)) / (2 * h);
    const double analytic = g.data()[i];
    EXPECT_LT(std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12), 1e-4) << i;
  }
}

TEST(CtcGrad, OptimumHasZeroGradient) {
  const auto g = ctc_grad(one_hot({1, 0, 2, 2}, 3), std::vector<TokenId>{1, 2});
  for (double v : g.data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(CtcLossOp, BackwardThroughLogSoftmaxEqualsCtcGrad) {
  std::mt19937_64 rng(109);
  auto logits = testing::random_tensor<double>({6, 4}, rng, -2, 2, true);
  const std::vector<TokenId> target{1, 2, 1};
  const auto loss = ctc_loss_op(log_softmax(logits), target);
  EXPECT_NEAR(loss.item(), ctc_loss(log_softmax(logits.detach()), target), 1e-14);
  backward(loss);
  const auto g = ctc_grad(logits.detach(), target);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(logits.grad()[i], g.data()[i], 1e-12);
  std::vector<Td> inputs{logits.detach()};
  const auto r = grad_check([&] { return ctc_loss_op(log_softmax(inputs[0]), target); }, inputs);
  EXPECT_LT(r.max_rel_error, 1e-4) << describe(r);
}

TEST(CtcLoss, BoostingAValidAlignmentNeverIncreasesLoss) {
  std::mt19937_64 rng(110);
  const std::vector<TokenId> target{1, 2};
  const std::vector<TokenId> alignment{0, 1, 1, 0, 2, 2};
  auto lp = random_lattice(6, 3, rng);
  double prev = ctc_loss(lp, target);
  for (int step = 0; step < 20; ++step) {
    std::vector<double> data(lp.data().begin(), lp.data().end());
    for (std::size_t t = 0; t < 6; ++t) {
      data[t * 3 + static_cast<std::size_t>(alignment[t])] += 0.3;
      double z = 0;
      for (std::size_t k = 0; k < 3; ++k) z += std::exp(data[t * 3 + k]);
      for (std::size_t k = 0; k < 3; ++k) data[t * 3 + k] -= std::log(z);
    }
    lp = Td({6, 3}, std::move(data));
    const double cur = ctc_loss(lp, target);
    EXPECT_LE(cur, prev + 1e-12);
    prev = cur;
  }
}

TEST(CtcLoss, SensitiveToFrameOrder) {
  // Frames favour "a" then "b"; reversing them favours "b a".
  const double hi = std::log(0.8), lo = std::log(0.1);
  Td lp({2, 3}, {lo, hi, lo, lo, lo, hi});
  Td rev = reverse_rows(lp);
  const std::vector<TokenId> target{1, 2};
  EXPECT_GT(std::abs(ctc_loss(lp, target) - ctc_loss(rev, target)), 1.0);
}

TEST(Greedy, AllBlankIsEmpty) {
  EXPECT_TRUE(greedy_decode(one_hot({0, 0, 0}, 4)).empty());
}

TEST(Greedy, CollapseWalkthrough) {
  const TokenId a = 3, b = 4;
  EXPECT_EQ(greedy_decode(one_hot({a, a, 0, a, b, b}, 5)), (std::vector<TokenId>{a, a, b}));
}

TEST(Greedy, TiesGoToLowestId) {
  const double l = std::log(0.5);
  EXPECT_EQ(greedy_decode(Td({1, 3}, {-5.0, l, l})), (std::vector<TokenId>{1}));
  EXPECT_TRUE(greedy_decode(Td({1, 3}, {l, l, -5.0})).empty());
}

TEST(Greedy, DecodesConstructedAlignment) {
  std::mt19937_64 rng(111);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<TokenId> path(12);
    for (auto& p : path) p = std::uniform_int_distribution<TokenId>(0, 4)(rng);
    EXPECT_EQ(greedy_decode(one_hot(path, 5)), collapse(path));
  }
}

}  // namespace
}  // namespace mlma::ctc

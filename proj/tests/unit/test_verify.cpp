#include <gtest/gtest.h>

#include <set>
#include <string>

#include "mlma/verify.hpp"

namespace {

TEST(GradcheckSuite, CoversEveryDifferentiableOpAndBlock) {
  const auto outcomes = mlma::verify::gradcheck_suite();
  std::set<std::string> names;
  for (const auto& o : outcomes) names.insert(o.name);
  for (const char* expected :
       {"matmul", "add", "sub", "mul", "scale", "add_bias", "expand_cols", "slice_cols", "reverse_rows", "reshape",
        "sum", "mean", "softplus", "silu", "gelu", "sigmoid", "exp", "log", "layer_norm", "conv1d_depthwise_causal",
        "conv1d_depthwise_centered", "conv2d", "logsumexp_rows", "logsumexp_cols", "log_softmax", "glu", "dropout",
        "selective_scan_sequential", "selective_scan_chunked", "ctc_loss", "mamba_block", "mamba_block_chunked",
        "bimamba", "feed_forward", "conv_module", "subsampler", "conmamba_stack_ctc"}) {
    EXPECT_TRUE(names.contains(expected)) << expected;
  }
  EXPECT_EQ(names.size(), outcomes.size());
}

TEST(GradcheckSuite, AllCasesPassAtDefaultTolerances) {
  for (const auto& o : mlma::verify::gradcheck_suite()) {
    EXPECT_TRUE(o.passed) << o.name << ": " << o.detail;
    EXPECT_LT(o.max_rel_error, o.tolerance) << o.name;
    EXPECT_LE(o.tolerance, 1e-3) << o.name;
  }
}

TEST(GradcheckSuite, SingleOpsUseTheTighterTolerance) {
  for (const auto& o : mlma::verify::gradcheck_suite()) {
    if (o.name == "matmul" || o.name == "ctc_loss" || o.name.starts_with("selective_scan")) {
      EXPECT_DOUBLE_EQ(o.tolerance, 1e-4) << o.name;
    }
  }
}

TEST(GradcheckSuite, ImpossibleToleranceFails) {
  bool any_failed = false;
  for (const auto& o : mlma::verify::gradcheck_suite(2024, 1e-300, 1e-300)) any_failed |= !o.passed;
  EXPECT_TRUE(any_failed);
}

}  // namespace

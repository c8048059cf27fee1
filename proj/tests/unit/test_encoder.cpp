#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "mlma/ctc.hpp"
#include "mlma/encoder.hpp"
#include "mlma/error.hpp"
#include "mlma/grad_check.hpp"
#include "test_util.hpp"

namespace mlma::encoder {
namespace {

using testing::random_tensor;
using Td = Tensor<double>;

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.num_layers = 2;
  cfg.d_model = 8;
  cfg.ffn_dim = 16;
  cfg.n_state = 4;
  cfg.n_mels = 12;
  cfg.vocab_size = 6;
  cfg.subsample_channels = 3;
  cfg.conv_kernel = 5;
  cfg.dropout = 0.0;
  return cfg;
}

bool is_bias(const std::string& name) {
  return name.ends_with("bias") || name.ends_with(".beta");
}

void fill(Td& t, double v) {
  for (auto& x : t.mutable_data()) x = v;
}

TEST(Subsampler, LengthFormula) {
  EXPECT_EQ(subsampled_length(16), 4u);
  EXPECT_EQ(subsampled_length(1), 1u);
  EXPECT_EQ(subsampled_length(17), 5u);
  for (std::size_t t = 1; t < 500; ++t) {
    // Two rounds of ceil(n / 2).
    EXPECT_EQ(subsampled_length(t), ((t + 1) / 2 + 1) / 2) << t;
  }
}

TEST(Subsampler, OutputShape) {
  auto cfg = tiny_config();
  std::mt19937_64 rng(81);
  const auto p = SubsamplerParams<double>::create(cfg, rng);
  for (std::size_t t : {1, 2, 7, 16}) {
    const auto [h, len] = subsample_cnn(random_tensor<double>({t, cfg.n_mels}, rng), p);
    EXPECT_EQ(len, subsampled_length(t));
    EXPECT_EQ(h.shape(), (Shape{len, cfg.d_model}));
  }
}

TEST(CountParams, LinearClosedForm) {
  EXPECT_EQ(Linear<float>::count(64, 64, true), 64u * 64u + 64u);
}

TEST(CountParams, PaperDefaultsInBand) {
  EncoderConfig cfg;
  cfg.vocab_size = 100;
  const auto n = count_params(cfg);
  EXPECT_GE(n, 25'000'000u);
  EXPECT_LE(n, 45'000'000u);
}

TEST(CountParams, MonotoneInDepth) {
  auto cfg = tiny_config();
  const auto base = count_params(cfg);
  cfg.num_layers *= 2;
  EXPECT_GT(count_params(cfg), base);
}

TEST(CountParams, MatchesShapeWalk) {
  EncoderConfig cfg;
  cfg.num_layers = 2;
  cfg.d_model = 64;
  cfg.ffn_dim = 256;
  cfg.subsample_channels = 16;
  cfg.vocab_size = 20;
  const auto model = Encoder<float>::create(cfg, 1);
  std::size_t walked = 0;
  for (const auto& [name, t] : model.named_params()) {
    std::size_t n = 1;
    for (auto e : t.shape()) n *= e;
    walked += n;
  }
  EXPECT_EQ(count_params(cfg), walked);
}

TEST(ConMambaBlock, ShapeInvariance) {
  std::mt19937_64 rng(82);
  for (auto [T, d] : {std::pair<std::size_t, std::size_t>{3, 8}, {40, 16}}) {
    auto cfg = tiny_config();
    cfg.d_model = d;
    const auto p = ConMambaBlockParams<double>::create(cfg, rng);
    EXPECT_EQ(conmamba_block(random_tensor<double>({T, d}, rng), p, cfg).shape(), (Shape{T, d}));
  }
}

TEST(ConMambaBlock, ZeroBranchesReduceToLayerNorm) {
  auto cfg = tiny_config();
  std::mt19937_64 rng(83);
  auto p = ConMambaBlockParams<double>::create(cfg, rng);
  NamedParams<double> branches;
  p.ffn1.collect("ffn1", branches);
  p.mamba_fwd.collect("f", branches);
  p.mamba_bwd.collect("b", branches);
  p.conv.collect("conv", branches);
  p.ffn2.collect("ffn2", branches);
  for (auto& [name, t] : branches) fill(t, 0.0);
  for (auto& v : p.norm_gamma.mutable_data()) v = std::uniform_real_distribution<double>(0.5, 1.5)(rng);
  for (auto& v : p.norm_beta.mutable_data()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  const auto x = random_tensor<double>({7, 8}, rng);
  const auto want = layer_norm(x, p.norm_gamma, p.norm_beta, 1e-5);
  EXPECT_LT(testing::max_abs_diff(conmamba_block(x, p, cfg), want), 1e-12);
}

TEST(ConMambaBlock, StackedGradCheckWithCtcHead) {
  auto cfg = tiny_config();
  std::mt19937_64 rng(84);
  std::vector<ConMambaBlockParams<double>> blocks;
  for (int i = 0; i < 2; ++i) blocks.push_back(ConMambaBlockParams<double>::create(cfg, rng));
  auto head = Linear<double>::create(cfg.d_model, cfg.vocab_size, true, rng);
  std::vector<Td> inputs{random_tensor<double>({6, cfg.d_model}, rng)};
  NamedParams<double> named;
  for (int i = 0; i < 2; ++i) blocks[static_cast<std::size_t>(i)].collect("l" + std::to_string(i), named);
  head.collect("head", named);
  for (auto& [name, t] : named) {
    // Randomize biases (including the delta offset, so delta is O(1)) away from init.
    if (is_bias(name)) {
      for (auto& v : t.mutable_data()) v = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
    }
    inputs.push_back(t);
  }
  const std::vector<TokenId> target{3, 4, 3};
  const auto f = [&] {
    auto h = inputs[0];
    for (const auto& b : blocks) h = conmamba_block(h, b, cfg);
    return ctc::ctc_loss_op(log_softmax(head(h)), target);
  };
  // Step 1e-5 balances truncation against roundoff for entries whose true gradient is ~1e-8.
  const auto r = grad_check(f, inputs, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-3) << describe(r);
}

TEST(Encoder, SubsamplerGradCheck) {
  auto cfg = tiny_config();
  cfg.n_mels = 6;
  std::mt19937_64 rng(85);
  auto p = SubsamplerParams<double>::create(cfg, rng);
  NamedParams<double> named;
  p.collect("s", named);
  std::vector<Td> inputs{random_tensor<double>({7, 6}, rng)};
  for (auto& [name, t] : named) {
    if (is_bias(name)) fill(t, 0.1);
    inputs.push_back(t);
  }
  const auto r = grad_check([&] { return subsample_cnn(inputs[0], p).first; }, inputs);
  EXPECT_LT(r.max_rel_error, 1e-3) << describe(r);
}

TEST(Encoder, LogProbRowsNormalize) {
  auto cfg = tiny_config();
  const auto model = Encoder<float>::create(cfg, 7);
  std::mt19937_64 rng(86);
  const auto out = model.encode(random_tensor<float>({23, cfg.n_mels}, rng, -2, 2));
  EXPECT_EQ(out.out_length, subsampled_length(23));
  EXPECT_EQ(out.log_probs.shape(), (Shape{out.out_length, cfg.vocab_size}));
  EXPECT_EQ(out.embeddings.shape(), (Shape{out.out_length, cfg.d_model}));
  for (std::size_t t = 0; t < out.out_length; ++t) {
    double z = 0;
    for (std::size_t k = 0; k < cfg.vocab_size; ++k) z += std::exp(static_cast<double>(out.log_probs.at(t, k)));
    EXPECT_NEAR(z, 1.0, 1e-5);
  }
}

TEST(Encoder, EvalModeIsDeterministic) {
  auto cfg = tiny_config();
  cfg.dropout = 0.1;
  const auto model = Encoder<float>::create(cfg, 8);
  std::mt19937_64 rng(87);
  const auto x = random_tensor<float>({19, cfg.n_mels}, rng);
  EXPECT_EQ(testing::max_abs_diff(model.encode(x).log_probs, model.encode(x).log_probs), 0.0);
}

TEST(Encoder, ZeroDropoutTrainEqualsEval) {
  auto cfg = tiny_config();
  const auto model = Encoder<double>::create(cfg, 9);
  std::mt19937_64 rng(88), drop_rng(1);
  const auto x = random_tensor<double>({13, cfg.n_mels}, rng);
  const ForwardContext train{true, &drop_rng};
  EXPECT_EQ(testing::max_abs_diff(model.encode(x, train).log_probs, model.encode(x).log_probs), 0.0);
}

TEST(Encoder, DropoutChangesTrainingOutput) {
  auto cfg = tiny_config();
  cfg.dropout = 0.3;
  const auto model = Encoder<double>::create(cfg, 10);
  std::mt19937_64 rng(89), drop_rng(1);
  const auto x = random_tensor<double>({13, cfg.n_mels}, rng);
  const ForwardContext train{true, &drop_rng};
  EXPECT_GT(testing::max_abs_diff(model.encode(x, train).log_probs, model.encode(x).log_probs), 0.0);
}

TEST(Encoder, RejectsEmptyAndMismatchedInput) {
  auto cfg = tiny_config();
  const auto model = Encoder<float>::create(cfg, 11);
  EXPECT_THROW(model.encode(Tensor<float>::zeros({0, cfg.n_mels})), ValidationError);
  EXPECT_THROW(model.encode(Tensor<float>::zeros({4, cfg.n_mels + 1})), DimensionError);
}

TEST(EncoderConfig, Validation) {
  auto cfg = tiny_config();
  cfg.vocab_size = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.dropout = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.d_model = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Encoder, ParamNamesAreUniqueAndStable) {
  const auto a = Encoder<float>::create(tiny_config(), 12).named_params();
  const auto b = Encoder<float>::create(tiny_config(), 99).named_params();
  ASSERT_EQ(a.size(), b.size());
  std::set<std::string> names;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_TRUE(names.insert(a[i].first).second) << a[i].first;
  }
}

// With both Mamba branches and every bias zeroed, each layer only mixes
// frames through its depthwise conv, so the stack is translation-equivariant
// with a bounded receptive field: swapping two segments separated by wide
// zero gaps swaps their outputs.
TEST(Encoder, ZeroMambaStackIsLocal) {
  auto cfg = tiny_config();
  cfg.conv_kernel = 31;
  std::mt19937_64 rng(90);
  std::vector<ConMambaBlockParams<double>> blocks;
  for (int i = 0; i < 2; ++i) {
    auto p = ConMambaBlockParams<double>::create(cfg, rng);
    NamedParams<double> named;
    p.collect("l", named);
    for (auto& [name, t] : named) {
      if (is_bias(name) || name.find("mamba") != std::string::npos) fill(t, 0.0);
    }
    blocks.push_back(p);
  }
  const std::size_t radius = cfg.num_layers * (cfg.conv_kernel / 2);
  const std::size_t la = 5, lb = 7, gap = radius;
  const auto seg_a = random_tensor<double>({la, cfg.d_model}, rng);
  const auto seg_b = random_tensor<double>({lb, cfg.d_model}, rng);
  const auto layout = [&](const Td& first, const Td& second) {
    const std::size_t d = cfg.d_model, total = 3 * gap + first.dim(0) + second.dim(0);
    std::vector<double> data(total * d, 0.0);
    std::copy(first.data().begin(), first.data().end(), data.begin() + static_cast<std::ptrdiff_t>(gap * d));
    std::copy(second.data().begin(), second.data().end(),
              data.begin() + static_cast<std::ptrdiff_t>((2 * gap + first.dim(0)) * d));
    return Td({total, d}, std::move(data));
  };
  const auto run = [&](Td h) {
    for (const auto& b : blocks) h = conmamba_block(h, b, cfg);
    return h;
  };
  const auto y1 = run(layout(seg_a, seg_b));
  const auto y2 = run(layout(seg_b, seg_a));
  for (std::size_t i = 0; i < la; ++i) {
    for (std::size_t c = 0; c < cfg.d_model; ++c) {
      EXPECT_NEAR(y1.at(gap + i, c), y2.at(2 * gap + lb + i, c), 1e-12);
    }
  }
  for (std::size_t i = 0; i < lb; ++i) {
    for (std::size_t c = 0; c < cfg.d_model; ++c) {
      EXPECT_NEAR(y1.at(2 * gap + la + i, c), y2.at(gap + i, c), 1e-12);
    }
  }
}

}  // namespace
}  // namespace mlma::encoder

#include "mlma/verify.hpp"

#include <functional>
#include <random>

#include "mlma/ctc.hpp"
#include "mlma/encoder.hpp"
#include "mlma/error.hpp"
#include "mlma/grad_check.hpp"
#include "mlma/ops.hpp"
#include "mlma/ssm.hpp"

namespace mlma::verify {

namespace {

using Td = Tensor<double>;

Td random_leaf(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> data(numel(shape));
  for (auto& v : data) v = dist(rng);
  return Td(std::move(shape), std::move(data), true);
}

void randomize(Td& t, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.mutable_data()) v = dist(rng);
}

bool is_bias(const std::string& name) { return name.ends_with("bias") || name.ends_with(".beta"); }

class Suite {
 public:
  Suite(std::uint64_t seed, double op_tolerance, double block_tolerance)
      : rng_(seed), op_tolerance_(op_tolerance), block_tolerance_(block_tolerance) {}

  void check(const std::string& name, std::vector<Td> inputs, const std::function<Td(const std::vector<Td>&)>& f,
             double eps = 1e-6) {
    run(name, std::move(inputs), f, eps, op_tolerance_);
  }

  // Checks a block: inputs[0] is the data tensor, the rest are its parameters.
  void check_block(const std::string& name, Td x, const NamedParams<double>& params,
                   const std::function<Td(const Td&)>& f, double eps = 1e-6) {
    std::vector<Td> inputs{std::move(x)};
    for (const auto& [pname, t] : params) inputs.push_back(t);
    run(name, std::move(inputs), [&](const std::vector<Td>& in) { return f(in[0]); }, eps, block_tolerance_);
  }

  std::mt19937_64& rng() { return rng_; }
  std::vector<CheckOutcome> take() { return std::move(outcomes_); }

 private:
  void run(const std::string& name, std::vector<Td> inputs, const std::function<Td(const std::vector<Td>&)>& f,
           double eps, double tolerance) {
    CheckOutcome out;
    out.name = name;
    out.tolerance = tolerance;
    try {
      const auto r = grad_check([&] { return f(inputs); }, inputs, eps);
      out.max_rel_error = r.max_rel_error;
      out.passed = r.max_rel_error < tolerance;
      out.detail = describe(r);
    } catch (const std::exception& e) {
      out.passed = false;
      out.detail = e.what();
    }
    outcomes_.push_back(std::move(out));
  }

  std::mt19937_64 rng_;
  double op_tolerance_;
  double block_tolerance_;
  std::vector<CheckOutcome> outcomes_;
};

}  // namespace

std::vector<CheckOutcome> gradcheck_suite(std::uint64_t seed, double op_tolerance, double block_tolerance) {
  Suite s(seed, op_tolerance, block_tolerance);
  auto& rng = s.rng();
  const auto leaf = [&](Shape shape, double lo = -1.0, double hi = 1.0) { return random_leaf(std::move(shape), rng, lo, hi); };

  s.check("matmul", {leaf({3, 4}), leaf({4, 2})}, [](const auto& in) { return matmul(in[0], in[1]); });
  s.check("add", {leaf({3, 4}), leaf({3, 4})}, [](const auto& in) { return add(in[0], in[1]); });
  s.check("sub", {leaf({3, 4}), leaf({3, 4})}, [](const auto& in) { return sub(in[0], in[1]); });
  s.check("mul", {leaf({3, 4}), leaf({3, 4})}, [](const auto& in) { return mul(in[0], in[1]); });
  s.check("scale", {leaf({3, 4})}, [](const auto& in) { return scale(in[0], -1.7); });
  s.check("add_bias", {leaf({3, 4}), leaf({4})}, [](const auto& in) { return add_bias(in[0], in[1]); });
  s.check("expand_cols", {leaf({3, 1})}, [](const auto& in) { return expand_cols(in[0], 4); });
  s.check("slice_cols", {leaf({3, 5})}, [](const auto& in) { return slice_cols(in[0], 1, 4); });
  s.check("reverse_rows", {leaf({4, 3})}, [](const auto& in) { return reverse_rows(in[0]); });
  s.check("reshape", {leaf({4, 3})}, [](const auto& in) { return in[0].reshape({2, 6}); });
  s.check("sum", {leaf({3, 4})}, [](const auto& in) { return sum(in[0]); });
  s.check("mean", {leaf({3, 4})}, [](const auto& in) { return mean(in[0]); });
  s.check("softplus", {leaf({3, 4}, -3, 3)}, [](const auto& in) { return softplus(in[0]); });
  s.check("silu", {leaf({3, 4}, -3, 3)}, [](const auto& in) { return silu(in[0]); });
  s.check("gelu", {leaf({3, 4}, -3, 3)}, [](const auto& in) { return gelu(in[0]); });
  s.check("sigmoid", {leaf({3, 4}, -3, 3)}, [](const auto& in) { return sigmoid(in[0]); });
  s.check("exp", {leaf({3, 4})}, [](const auto& in) { return exp(in[0]); });
  s.check("log", {leaf({3, 4}, 0.2, 3.0)}, [](const auto& in) { return log(in[0]); });
  s.check("layer_norm", {leaf({3, 5}), leaf({5}), leaf({5})},
          [](const auto& in) { return layer_norm(in[0], in[1], in[2]); });
  s.check("conv1d_depthwise_causal", {leaf({6, 3}), leaf({4, 3})},
          [](const auto& in) { return conv1d_depthwise(in[0], in[1], true); });
  s.check("conv1d_depthwise_centered", {leaf({6, 3}), leaf({5, 3})},
          [](const auto& in) { return conv1d_depthwise(in[0], in[1], false); });
  s.check("conv2d", {leaf({5, 6, 2}), leaf({3, 3, 2, 3}), leaf({3})},
          [](const auto& in) { return conv2d(in[0], in[1], in[2], 2, 1); });
  s.check("logsumexp_rows", {leaf({3, 4}, -3, 3)}, [](const auto& in) { return logsumexp(in[0], 1); });
  s.check("logsumexp_cols", {leaf({3, 4}, -3, 3)}, [](const auto& in) { return logsumexp(in[0], 0); });
  s.check("log_softmax", {leaf({3, 4}, -3, 3)}, [](const auto& in) { return log_softmax(in[0]); });
  s.check("glu", {leaf({3, 6})}, [](const auto& in) { return glu(in[0]); });
  s.check("dropout", {leaf({4, 5})}, [](const auto& in) {
    std::mt19937_64 mask_rng(99);  // identical mask on every evaluation
    return dropout(in[0], 0.3, mask_rng, true);
  });

  for (std::size_t chunk : {std::size_t{0}, std::size_t{3}}) {
    s.check(chunk == 0 ? "selective_scan_sequential" : "selective_scan_chunked",
            {leaf({7, 3}), leaf({7, 3}, 0.05, 0.8), leaf({3, 4}, -2.0, -0.2), leaf({7, 4}), leaf({7, 4})},
            [chunk](const auto& in) { return ssm::selective_scan(in[0], in[1], in[2], in[3], in[4], chunk); });
  }

  const std::vector<TokenId> target{3, 4, 3};
  s.check("ctc_loss", {leaf({6, 5}, -2, 2)},
          [&](const auto& in) { return ctc::ctc_loss_op(log_softmax(in[0]), target); });

  const ssm::MambaConfig mcfg{4, 3, 2, 4};
  {
    auto p = ssm::MambaBlockParams<double>::create(mcfg, rng);
    randomize(p.conv_bias, rng, -0.3, 0.3);
    NamedParams<double> named;
    p.collect("mamba", named);
    s.check_block("mamba_block", leaf({5, 4}), named, [&](const Td& x) { return ssm::mamba_block(x, p); });
    s.check_block("mamba_block_chunked", leaf({5, 4}), named, [&](const Td& x) { return ssm::mamba_block(x, p, 2); });
  }
  {
    auto fwd = ssm::MambaBlockParams<double>::create(mcfg, rng);
    auto bwd = ssm::MambaBlockParams<double>::create(mcfg, rng);
    NamedParams<double> named;
    fwd.collect("fwd", named);
    bwd.collect("bwd", named);
    for (auto& [name, t] : named) {
      if (is_bias(name)) randomize(t, rng, -0.3, 0.3);
    }
    s.check_block("bimamba", leaf({5, 4}), named, [&](const Td& x) { return ssm::bimamba(x, fwd, bwd); });
  }

  encoder::EncoderConfig cfg;
  cfg.num_layers = 2;
  cfg.d_model = 8;
  cfg.ffn_dim = 16;
  cfg.n_state = 4;
  cfg.n_mels = 6;
  cfg.vocab_size = 6;
  cfg.subsample_channels = 3;
  cfg.conv_kernel = 5;
  cfg.dropout = 0.0;
  {
    auto p = encoder::FeedForward<double>::create(cfg, rng);
    NamedParams<double> named;
    p.collect("ffn", named);
    for (auto& [name, t] : named) {
      if (is_bias(name)) randomize(t, rng, -0.3, 0.3);
    }
    s.check_block("feed_forward", leaf({4, 8}), named, [&](const Td& x) { return p(x, 0.0, {}); });
  }
  {
    auto p = encoder::ConvModule<double>::create(cfg, rng);
    NamedParams<double> named;
    p.collect("conv", named);
    for (auto& [name, t] : named) {
      if (is_bias(name)) randomize(t, rng, -0.3, 0.3);
    }
    s.check_block("conv_module", leaf({6, 8}), named, [&](const Td& x) { return p(x, 0.0, {}); });
  }
  {
    auto p = encoder::SubsamplerParams<double>::create(cfg, rng);
    NamedParams<double> named;
    p.collect("sub", named);
    for (auto& [name, t] : named) {
      if (is_bias(name)) randomize(t, rng, 0.05, 0.15);
    }
    s.check_block("subsampler", leaf({7, 6}), named, [&](const Td& x) { return encoder::subsample_cnn(x, p).first; });
  }
  {
    std::vector<encoder::ConMambaBlockParams<double>> blocks;
    for (std::size_t i = 0; i < cfg.num_layers; ++i) blocks.push_back(encoder::ConMambaBlockParams<double>::create(cfg, rng));
    auto head = Linear<double>::create(cfg.d_model, cfg.vocab_size, true, rng);
    NamedParams<double> named;
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect("layer" + std::to_string(i), named);
    head.collect("head", named);
    // Biases, including the step-size offset, move away from init so every
    // parameter has a gradient well above finite-difference resolution.
    for (auto& [name, t] : named) {
      if (is_bias(name)) randomize(t, rng, -0.3, 0.3);
    }
    // Some entries have gradients near 1e-9, where roundoff in the loss sets
    // the error of a central difference; a wider step keeps it small.
    s.check_block(
        "conmamba_stack_ctc", leaf({6, cfg.d_model}), named,
        [&](const Td& x) {
          auto h = x;
          for (const auto& b : blocks) h = encoder::conmamba_block(h, b, cfg);
          return ctc::ctc_loss_op(log_softmax(head(h)), target);
        },
        1e-4);
  }
  return s.take();
}

}  // namespace mlma::verify

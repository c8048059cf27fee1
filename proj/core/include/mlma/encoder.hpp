#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mlma/nn.hpp"
#include "mlma/ssm.hpp"
#include "mlma/tensor.hpp"

namespace mlma::encoder {

enum class Activation { kGelu };

struct EncoderConfig {
  std::size_t num_layers = 18;
  std::size_t d_model = 256;
  std::size_t ffn_dim = 1024;
  double dropout = 0.1;
  Activation activation = Activation::kGelu;
  std::size_t n_state = 16;
  std::size_t expand = 2;
  std::size_t dconv = 4;
  std::size_t n_mels = 80;
  std::size_t vocab_size = 4;
  std::size_t subsample_factor = 4;
  std::size_t subsample_channels = 64;
  std::size_t conv_kernel = 31;  // depthwise width inside the convolution module
  std::size_t scan_chunk = 0;    // 0 = sequential scan kernel

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
  ssm::MambaConfig mamba() const { return {d_model, n_state, expand, dconv}; }
};

// Output extent of one kernel-3 / stride-2 / pad-1 stage: floor((n - 1) / 2) + 1.
std::size_t stride2_length(std::size_t n);
// Frames after the two-stage subsampler.
std::size_t subsampled_length(std::size_t frames);

// Exact trainable scalar count, by closed form per component.
std::size_t count_params(const EncoderConfig& cfg);

template <typename T>
struct FeedForward {
  Linear<T> fc1;  // d_model -> ffn_dim
  Linear<T> fc2;  // ffn_dim -> d_model

  static FeedForward create(const EncoderConfig& cfg, std::mt19937_64& rng);
  Tensor<T> operator()(const Tensor<T>& x, double dropout, const ForwardContext& ctx) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

// Pointwise conv -> GLU -> depthwise conv -> LayerNorm -> SiLU -> pointwise conv -> dropout.
template <typename T>
struct ConvModule {
  Linear<T> pointwise_in;  // d -> 2d
  Tensor<T> depthwise_kernel;
  Tensor<T> depthwise_bias;
  Tensor<T> norm_gamma;
  Tensor<T> norm_beta;
  Linear<T> pointwise_out;  // d -> d

  static ConvModule create(const EncoderConfig& cfg, std::mt19937_64& rng);
  Tensor<T> operator()(const Tensor<T>& x, double dropout, const ForwardContext& ctx) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

template <typename T>
struct ConMambaBlockParams {
  FeedForward<T> ffn1;
  ssm::MambaBlockParams<T> mamba_fwd;
  ssm::MambaBlockParams<T> mamba_bwd;
  ConvModule<T> conv;
  FeedForward<T> ffn2;
  Tensor<T> norm_gamma;
  Tensor<T> norm_beta;

  static ConMambaBlockParams create(const EncoderConfig& cfg, std::mt19937_64& rng);
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

// x1 = x + FFN1(x)/2; x2 = x1 + BiMamba(x1); x3 = x2 + Conv(x2);
// y = LayerNorm(x3 + FFN2(x3)/2).
template <typename T>
Tensor<T> conmamba_block(const Tensor<T>& x, const ConMambaBlockParams<T>& p, const EncoderConfig& cfg,
                         const ForwardContext& ctx = {});

template <typename T>
struct SubsamplerParams {
  Tensor<T> conv1_weight;  // [3 x 3 x 1 x C]
  Tensor<T> conv1_bias;
  Tensor<T> conv2_weight;  // [3 x 3 x C x C]
  Tensor<T> conv2_bias;
  Linear<T> proj;  // C * mel' -> d_model

  static SubsamplerParams create(const EncoderConfig& cfg, std::mt19937_64& rng);
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

// Two stride-2 3x3 conv blocks with GELU over (time x mel), flattened per
// frame and projected to d_model.
template <typename T>
std::pair<Tensor<T>, std::size_t> subsample_cnn(const Tensor<T>& features, const SubsamplerParams<T>& p);

template <typename T>
struct EncoderOutput {
  Tensor<T> embeddings;  // [T' x d_model]
  Tensor<T> log_probs;   // [T' x vocab_size]
  std::size_t out_length = 0;
};

template <typename T>
class Encoder {
 public:
  static Encoder create(const EncoderConfig& cfg, std::uint64_t seed);

  // features[T x n_mels] -> per-frame log-probabilities over the vocabulary.
  EncoderOutput<T> encode(const Tensor<T>& features, const ForwardContext& ctx = {}) const;

  const EncoderConfig& config() const { return cfg_; }
  // Stable names in construction order; tensors alias the model's leaves.
  NamedParams<T> named_params() const;

  SubsamplerParams<T>& subsampler() { return subsampler_; }
  std::vector<ConMambaBlockParams<T>>& layers() { return layers_; }
  Linear<T>& head() { return head_; }

 private:
  EncoderConfig cfg_;
  SubsamplerParams<T> subsampler_;
  std::vector<ConMambaBlockParams<T>> layers_;
  Linear<T> head_;
};

template <typename T>
EncoderOutput<T> encode(const Tensor<T>& features, const Encoder<T>& model, const ForwardContext& ctx = {}) {
  return model.encode(features, ctx);
}

}  // namespace mlma::encoder

#include "mlma/encoder.hpp"

#include <cmath>

#include "mlma/error.hpp"
#include "mlma/ops.hpp"

namespace mlma::encoder {

namespace {
constexpr double kNormEps = 1e-5;

template <typename T>
Tensor<T> ones_param(std::size_t d) {
  return constant_param<T>({d}, T{1});
}

template <typename T>
Tensor<T> zeros_param(std::size_t d) {
  return constant_param<T>({d}, T{0});
}
}  // namespace

void EncoderConfig::validate() const {
  const auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("encoder config: ") + name + " must be positive");
  };
  positive(num_layers, "num_layers");
  positive(d_model, "d_model");
  positive(ffn_dim, "ffn_dim");
  positive(n_state, "n_state");
  positive(expand, "expand");
  positive(dconv, "dconv");
  positive(n_mels, "n_mels");
  positive(subsample_channels, "subsample_channels");
  positive(conv_kernel, "conv_kernel");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("encoder config: dropout must lie in [0, 1)");
  if (vocab_size < 4) throw ConfigError("encoder config: vocab_size must be at least 4 (blank, BOS, EOS, one symbol)");
  if (subsample_factor != 4) throw ConfigError("encoder config: only the two-stage 4x subsampler is implemented");
}

std::size_t stride2_length(std::size_t n) {
  return n == 0 ? 0 : (n - 1) / 2 + 1;
}

std::size_t subsampled_length(std::size_t frames) {
  return stride2_length(stride2_length(frames));
}

std::size_t count_params(const EncoderConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model, f = cfg.ffn_dim, c = cfg.subsample_channels;
  const std::size_t mel_out = subsampled_length(cfg.n_mels);
  const std::size_t subsampler = (9 * c + c) + (9 * c * c + c) + (c * mel_out * d + d);
  const std::size_t ffn = (d * f + f) + (f * d + d);
  const std::size_t conv = (d * 2 * d + 2 * d) + (cfg.conv_kernel * d + d) + 2 * d + (d * d + d);
  const std::size_t block = 2 * ffn + 2 * ssm::MambaBlockParams<float>::count(cfg.mamba()) + conv + 2 * d;
  const std::size_t head = d * cfg.vocab_size + cfg.vocab_size;
  return subsampler + cfg.num_layers * block + head;
}

template <typename T>
FeedForward<T> FeedForward<T>::create(const EncoderConfig& cfg, std::mt19937_64& rng) {
  return {Linear<T>::create(cfg.d_model, cfg.ffn_dim, true, rng),
          Linear<T>::create(cfg.ffn_dim, cfg.d_model, true, rng)};
}

template <typename T>
Tensor<T> FeedForward<T>::operator()(const Tensor<T>& x, double rate, const ForwardContext& ctx) const {
  return fc2(apply_dropout(gelu(fc1(x)), rate, ctx));
}

template <typename T>
void FeedForward<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

template <typename T>
ConvModule<T> ConvModule<T>::create(const EncoderConfig& cfg, std::mt19937_64& rng) {
  const std::size_t d = cfg.d_model;
  ConvModule m;
  m.pointwise_in = Linear<T>::create(d, 2 * d, true, rng);
  m.depthwise_kernel =
      uniform_param<T>({cfg.conv_kernel, d}, 1.0 / std::sqrt(static_cast<double>(cfg.conv_kernel)), rng);
  m.depthwise_bias = constant_param<T>({d}, T{0});
  m.norm_gamma = ones_param<T>(d);
  m.norm_beta = zeros_param<T>(d);
  m.pointwise_out = Linear<T>::create(d, d, true, rng);
  return m;
}

template <typename T>
Tensor<T> ConvModule<T>::operator()(const Tensor<T>& x, double rate, const ForwardContext& ctx) const {
  auto h = glu(pointwise_in(x));
  h = add_bias(conv1d_depthwise(h, depthwise_kernel, false), depthwise_bias);
  h = silu(layer_norm(h, norm_gamma, norm_beta, T(kNormEps)));
  return apply_dropout(pointwise_out(h), rate, ctx);
}

template <typename T>
void ConvModule<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  pointwise_in.collect(prefix + ".pointwise_in", out);
  out.emplace_back(prefix + ".depthwise.weight", depthwise_kernel);
  out.emplace_back(prefix + ".depthwise.bias", depthwise_bias);
  out.emplace_back(prefix + ".norm.gamma", norm_gamma);
  out.emplace_back(prefix + ".norm.beta", norm_beta);
  pointwise_out.collect(prefix + ".pointwise_out", out);
}

template <typename T>
ConMambaBlockParams<T> ConMambaBlockParams<T>::create(const EncoderConfig& cfg, std::mt19937_64& rng) {
  ConMambaBlockParams p;
  p.ffn1 = FeedForward<T>::create(cfg, rng);
  p.mamba_fwd = ssm::MambaBlockParams<T>::create(cfg.mamba(), rng);
  p.mamba_bwd = ssm::MambaBlockParams<T>::create(cfg.mamba(), rng);
  p.conv = ConvModule<T>::create(cfg, rng);
  p.ffn2 = FeedForward<T>::create(cfg, rng);
  p.norm_gamma = ones_param<T>(cfg.d_model);
  p.norm_beta = zeros_param<T>(cfg.d_model);
  return p;
}

template <typename T>
void ConMambaBlockParams<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  ffn1.collect(prefix + ".ffn1", out);
  mamba_fwd.collect(prefix + ".mamba_fwd", out);
  mamba_bwd.collect(prefix + ".mamba_bwd", out);
  conv.collect(prefix + ".conv", out);
  ffn2.collect(prefix + ".ffn2", out);
  out.emplace_back(prefix + ".norm.gamma", norm_gamma);
  out.emplace_back(prefix + ".norm.beta", norm_beta);
}

template <typename T>
Tensor<T> conmamba_block(const Tensor<T>& x, const ConMambaBlockParams<T>& p, const EncoderConfig& cfg,
                         const ForwardContext& ctx) {
  if (x.rank() != 2 || x.dim(1) != cfg.d_model) {
    throw DimensionError("conmamba_block: input " + to_string(x.shape()) + " for d_model " +
                         std::to_string(cfg.d_model));
  }
  const T half{0.5};
  const auto x1 = add(x, scale(p.ffn1(x, cfg.dropout, ctx), half));
  const auto mixed = ssm::bimamba(x1, p.mamba_fwd, p.mamba_bwd, cfg.scan_chunk);
  const auto x2 = add(x1, apply_dropout(mixed, cfg.dropout, ctx));
  const auto x3 = add(x2, p.conv(x2, cfg.dropout, ctx));
  return layer_norm(add(x3, scale(p.ffn2(x3, cfg.dropout, ctx), half)), p.norm_gamma, p.norm_beta,
                    T(kNormEps));
}

template <typename T>
SubsamplerParams<T> SubsamplerParams<T>::create(const EncoderConfig& cfg, std::mt19937_64& rng) {
  const std::size_t c = cfg.subsample_channels;
  SubsamplerParams p;
  p.conv1_weight = uniform_param<T>({3, 3, 1, c}, 1.0 / 3.0, rng);
  p.conv1_bias = constant_param<T>({c}, T{0});
  p.conv2_weight = uniform_param<T>({3, 3, c, c}, 1.0 / std::sqrt(9.0 * static_cast<double>(c)), rng);
  p.conv2_bias = constant_param<T>({c}, T{0});
  p.proj = Linear<T>::create(c * subsampled_length(cfg.n_mels), cfg.d_model, true, rng);
  return p;
}

template <typename T>
void SubsamplerParams<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  out.emplace_back(prefix + ".conv1.weight", conv1_weight);
  out.emplace_back(prefix + ".conv1.bias", conv1_bias);
  out.emplace_back(prefix + ".conv2.weight", conv2_weight);
  out.emplace_back(prefix + ".conv2.bias", conv2_bias);
  proj.collect(prefix + ".proj", out);
}

template <typename T>
std::pair<Tensor<T>, std::size_t> subsample_cnn(const Tensor<T>& features, const SubsamplerParams<T>& p) {
  if (features.rank() != 2 || features.dim(0) == 0) {
    throw ValidationError("subsample_cnn: expected non-empty [T x n_mels] features, got " +
                          to_string(features.shape()));
  }
  const std::size_t frames = features.dim(0), mels = features.dim(1);
  auto h = features.reshape({frames, mels, 1});
  h = gelu(conv2d(h, p.conv1_weight, p.conv1_bias, 2, 1));
  h = gelu(conv2d(h, p.conv2_weight, p.conv2_bias, 2, 1));
  const std::size_t out_frames = h.dim(0);
  const auto flat = h.reshape({out_frames, h.dim(1) * h.dim(2)});
  return {p.proj(flat), out_frames};
}

template <typename T>
Encoder<T> Encoder<T>::create(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  Encoder model;
  model.cfg_ = cfg;
  model.subsampler_ = SubsamplerParams<T>::create(cfg, rng);
  model.layers_.reserve(cfg.num_layers);
  for (std::size_t i = 0; i < cfg.num_layers; ++i) {
    model.layers_.push_back(ConMambaBlockParams<T>::create(cfg, rng));
  }
  model.head_ = Linear<T>::create(cfg.d_model, cfg.vocab_size, true, rng);
  return model;
}

template <typename T>
EncoderOutput<T> Encoder<T>::encode(const Tensor<T>& features, const ForwardContext& ctx) const {
  if (features.rank() != 2 || features.dim(0) == 0) {
    throw ValidationError("encode: empty input (features " + to_string(features.shape()) + ")");
  }
  if (features.dim(1) != cfg_.n_mels) {
    throw DimensionError("encode: features have " + std::to_string(features.dim(1)) + " coefficients, model expects " +
                         std::to_string(cfg_.n_mels));
  }
  auto [h, length] = subsample_cnn(features, subsampler_);
  for (const auto& layer : layers_) h = conmamba_block(h, layer, cfg_, ctx);
  EncoderOutput<T> out;
  out.embeddings = h;
  out.log_probs = log_softmax(head_(h));
  out.out_length = length;
  return out;
}

template <typename T>
NamedParams<T> Encoder<T>::named_params() const {
  NamedParams<T> out;
  subsampler_.collect("subsampler", out);
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect("layers." + std::to_string(i), out);
  head_.collect("head", out);
  return out;
}

#define MLMA_INSTANTIATE_ENCODER(T)                                                                     \
  template struct FeedForward<T>;                                                                       \
  template struct ConvModule<T>;                                                                        \
  template struct ConMambaBlockParams<T>;                                                               \
  template struct SubsamplerParams<T>;                                                                  \
  template class Encoder<T>;                                                                            \
  template Tensor<T> conmamba_block(const Tensor<T>&, const ConMambaBlockParams<T>&, const EncoderConfig&, \
                                    const ForwardContext&);                                             \
  template std::pair<Tensor<T>, std::size_t> subsample_cnn(const Tensor<T>&, const SubsamplerParams<T>&);

MLMA_INSTANTIATE_ENCODER(float)
MLMA_INSTANTIATE_ENCODER(double)

}  // namespace mlma::encoder

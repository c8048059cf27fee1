#pragma once

#include <cstddef>
#include <random>

#include "mlma/tensor.hpp"

namespace mlma {

// Scalar definitions shared by the tensor ops and the plain-array kernels.
namespace math {

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
inline constexpr double kGeluSqrt2OverPi = 0.7978845608028654;
inline constexpr double kGeluCubic = 0.044715;

template <typename T>
T sigmoid(T x);
template <typename T>
T softplus(T x);
template <typename T>
T gelu(T x);
template <typename T>
T gelu_grad(T x);

}  // namespace math

enum class Unary { kSoftplus, kSilu, kGelu, kSigmoid, kExp, kLog };

const char* to_string(Unary f);

// a[m x k] . b[k x n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Same-shape arithmetic.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

// x[... x d] + bias[d], broadcast over the leading axes.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

// x[rows x 1] repeated into [rows x cols].
template <typename T>
Tensor<T> expand_cols(const Tensor<T>& x, std::size_t cols);

// Columns [begin, end) of a rank-2 tensor.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end);

// Reverses the leading (time) axis of a rank-2 tensor.
template <typename T>
Tensor<T> reverse_rows(const Tensor<T>& x);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> elementwise(Unary f, const Tensor<T>& x);

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) { return elementwise(Unary::kSoftplus, x); }
template <typename T>
Tensor<T> silu(const Tensor<T>& x) { return elementwise(Unary::kSilu, x); }
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) { return elementwise(Unary::kGelu, x); }
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) { return elementwise(Unary::kSigmoid, x); }
template <typename T>
Tensor<T> exp(const Tensor<T>& x) { return elementwise(Unary::kExp, x); }
template <typename T>
Tensor<T> log(const Tensor<T>& x) { return elementwise(Unary::kLog, x); }

// Normalizes over the last axis, then applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

// Per-channel convolution along time of x[T x d] with kernel[k x d].
// kernel row j weights lag j: causal output t sums kernel[j] * x[t - j].
// Non-causal mode centres the kernel: output t sums kernel[j] * x[t - j + (k - 1) / 2].
// Out-of-range frames read as zero.
template <typename T>
Tensor<T> conv1d_depthwise(const Tensor<T>& x, const Tensor<T>& kernel, bool causal);

// Channels-last 2-D convolution: x[H x W x Cin], weight[kh x kw x Cin x Cout],
// bias[Cout] -> [H' x W' x Cout] with H' = (H + 2 pad - kh) / stride + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad);

// Max-shifted log(sum(exp(x))) along one axis; the axis is removed.
template <typename T>
Tensor<T> logsumexp(const Tensor<T>& x, std::size_t axis);

// Log-softmax over the last axis.
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x);

// Gated linear unit over columns: first half * sigmoid(second half).
template <typename T>
Tensor<T> glu(const Tensor<T>& x);

// Inverted dropout; identity when !training or rate == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::mt19937_64& rng, bool training);

}  // namespace mlma

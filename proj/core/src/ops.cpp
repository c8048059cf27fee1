#include "mlma/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mlma/error.hpp"

namespace mlma {

using detail::make_result;
using detail::Node;

namespace math {

template <typename T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
T softplus(T x) {
  // log(1 + e^x) without overflow for large |x|.
  return std::max(x, T{0}) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T gelu(T x) {
  const T k = T(kGeluSqrt2OverPi);
  const T inner = k * (x + T(kGeluCubic) * x * x * x);
  return T(0.5) * x * (T{1} + std::tanh(inner));
}

template <typename T>
T gelu_grad(T x) {
  const T k = T(kGeluSqrt2OverPi);
  const T inner = k * (x + T(kGeluCubic) * x * x * x);
  const T th = std::tanh(inner);
  const T dinner = k * (T{1} + T(3 * kGeluCubic) * x * x);
  return T(0.5) * (T{1} + th) + T(0.5) * x * (T{1} - th * th) * dinner;
}

template float sigmoid(float);
template double sigmoid(double);
template float softplus(float);
template double softplus(double);
template float gelu(float);
template double gelu(double);
template float gelu_grad(float);
template double gelu_grad(double);

}  // namespace math

const char* to_string(Unary f) {
  switch (f) {
    case Unary::kSoftplus: return "softplus";
    case Unary::kSilu: return "silu";
    case Unary::kGelu: return "gelu";
    case Unary::kSigmoid: return "sigmoid";
    case Unary::kExp: return "exp";
    case Unary::kLog: return "log";
  }
  return "?";
}

namespace {

template <typename T>
void require_rank(const Tensor<T>& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + to_string(x.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                         " vs " + to_string(b.shape()));
  }
}

// Accumulates fn(i) into in.grad when the input participates in the tape.
template <typename T, typename Fn>
void accumulate(Node<T>& in, Fn&& fn) {
  if (!in.requires_grad) return;
  in.ensure_grad();
  for (std::size_t i = 0; i < in.grad.size(); ++i) in.grad[i] += fn(i);
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + to_string(a.shape()) + " by " +
                         to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T{0});
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = A[i * k + p];
      if (aip == T{0}) continue;
      const T* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return make_result<T>("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    const T* dy = self.grad.data();
    if (na.requires_grad) {
      na.ensure_grad();
      // dA = dY . B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const T* brow = nb.data.data() + p * n;
          const T* dyrow = dy + i * n;
          T acc{0};
          for (std::size_t j = 0; j < n; ++j) acc += dyrow[j] * brow[j];
          na.grad[i * k + p] += acc;
        }
      }
    }
    if (nb.requires_grad) {
      nb.ensure_grad();
      // dB = A^T . dY
      for (std::size_t i = 0; i < m; ++i) {
        const T* dyrow = dy + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const T aip = na.data[i * k + p];
          if (aip == T{0}) continue;
          T* gb = nb.grad.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gb[j] += aip * dyrow[j];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result<T>("add", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (int s = 0; s < 2; ++s) accumulate(*self.inputs[s], [&](std::size_t i) { return self.grad[i]; });
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    accumulate(*self.inputs[0], [&](std::size_t i) { return self.grad[i]; });
    accumulate(*self.inputs[1], [&](std::size_t i) { return -self.grad[i]; });
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    accumulate(na, [&](std::size_t i) { return self.grad[i] * nb.data[i]; });
    accumulate(nb, [&](std::size_t i) { return self.grad[i] * na.data[i]; });
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  return make_result<T>("scale", x.shape(), std::move(out), {x}, [factor](Node<T>& self) {
    accumulate(*self.inputs[0], [&](std::size_t i) { return self.grad[i] * factor; });
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.rank() == 0 || bias.rank() != 1 || x.shape().back() != bias.dim(0)) {
    throw DimensionError("add_bias: cannot broadcast " + to_string(bias.shape()) + " over " +
                         to_string(x.shape()));
  }
  const std::size_t d = bias.dim(0);
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] + bias.data()[i % d];
  return make_result<T>("add_bias", x.shape(), std::move(out), {x, bias}, [d](Node<T>& self) {
    accumulate(*self.inputs[0], [&](std::size_t i) { return self.grad[i]; });
    auto& nb = *self.inputs[1];
    if (nb.requires_grad) {
      nb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) nb.grad[i % d] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> expand_cols(const Tensor<T>& x, std::size_t cols) {
  if (x.rank() != 2 || x.dim(1) != 1) {
    throw DimensionError("expand_cols: expected [rows x 1], got " + to_string(x.shape()));
  }
  const std::size_t rows = x.dim(0);
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    std::fill_n(out.begin() + r * cols, cols, x.data()[r]);
  return make_result<T>("expand_cols", {rows, cols}, std::move(out), {x}, [cols](Node<T>& self) {
    accumulate(*self.inputs[0], [&](std::size_t r) {
      T acc{0};
      for (std::size_t c = 0; c < cols; ++c) acc += self.grad[r * cols + c];
      return acc;
    });
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_cols");
  if (begin > end || end > x.dim(1)) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") out of " + to_string(x.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1), width = end - begin;
  std::vector<T> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data().begin() + r * cols + begin, width, out.begin() + r * width);
  return make_result<T>("slice_cols", {rows, width}, std::move(out), {x},
                        [rows, cols, begin, width](Node<T>& self) {
                          auto& in = *self.inputs[0];
                          if (!in.requires_grad) return;
                          in.ensure_grad();
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t c = 0; c < width; ++c)
                              in.grad[r * cols + begin + c] += self.grad[r * width + c];
                        });
}

template <typename T>
Tensor<T> reverse_rows(const Tensor<T>& x) {
  require_rank(x, 2, "reverse_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data().begin() + (rows - 1 - r) * cols, cols, out.begin() + r * cols);
  return make_result<T>("reverse_rows", x.shape(), std::move(out), {x}, [rows, cols](Node<T>& self) {
    accumulate(*self.inputs[0], [&](std::size_t i) {
      const std::size_t r = i / cols, c = i % cols;
      return self.grad[(rows - 1 - r) * cols + c];
    });
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc{0};
  for (auto v : x.data()) acc += v;
  return make_result<T>("sum", {}, {acc}, {x}, [](Node<T>& self) {
    const T g = self.grad[0];
    accumulate(*self.inputs[0], [g](std::size_t) { return g; });
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.size() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), T{1} / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> elementwise(Unary f, const Tensor<T>& x) {
  const auto in = x.data();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const T v = in[i];
    switch (f) {
      case Unary::kSoftplus: out[i] = math::softplus(v); break;
      case Unary::kSilu: out[i] = v * math::sigmoid(v); break;
      case Unary::kGelu: out[i] = math::gelu(v); break;
      case Unary::kSigmoid: out[i] = math::sigmoid(v); break;
      case Unary::kExp: out[i] = std::exp(v); break;
      case Unary::kLog:
        if (!(v > T{0})) {
          throw DomainError("log of non-positive value " + std::to_string(v) + " at index " +
                            std::to_string(i));
        }
        out[i] = std::log(v);
        break;
    }
  }
  return make_result<T>(to_string(f), x.shape(), std::move(out), {x}, [f](Node<T>& self) {
    auto& in = *self.inputs[0];
    accumulate(in, [&](std::size_t i) {
      const T v = in.data[i];
      const T y = self.data[i];
      T d{0};
      switch (f) {
        case Unary::kSoftplus: d = math::sigmoid(v); break;
        case Unary::kSilu: {
          const T s = math::sigmoid(v);
          d = s * (T{1} + v * (T{1} - s));
          break;
        }
        case Unary::kGelu: d = math::gelu_grad(v); break;
        case Unary::kSigmoid: d = y * (T{1} - y); break;
        case Unary::kExp: d = y; break;
        case Unary::kLog: d = T{1} / v; break;
      }
      return self.grad[i] * d;
    });
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() == 0 || gamma.rank() != 1 || beta.rank() != 1 ||
      gamma.dim(0) != x.shape().back() || beta.dim(0) != x.shape().back()) {
    throw DimensionError("layer_norm: x " + to_string(x.shape()) + " gamma " +
                         to_string(gamma.shape()) + " beta " + to_string(beta.shape()));
  }
  if (!(eps > T{0})) throw DomainError("layer_norm: eps must be positive");
  const std::size_t d = gamma.dim(0);
  const std::size_t rows = x.size() / d;
  std::vector<T> out(x.size());
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(rows);
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * d;
    T mu{0};
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T is = T{1} / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mu) * is;
      out[r * d + j] = xhat[r * d + j] * gamma.data()[j] + beta.data()[j];
    }
  }
  return make_result<T>(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        auto& nx = *self.inputs[0];
        auto& ng = *self.inputs[1];
        auto& nbeta = *self.inputs[2];
        if (ng.requires_grad) ng.ensure_grad();
        if (nbeta.requires_grad) nbeta.ensure_grad();
        if (nx.requires_grad) nx.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          const T* dy = self.grad.data() + r * d;
          const T* xh = xhat.data() + r * d;
          T sum_g{0}, sum_gx{0};
          for (std::size_t j = 0; j < d; ++j) {
            const T g = dy[j] * ng.data[j];
            sum_g += g;
            sum_gx += g * xh[j];
            if (ng.requires_grad) ng.grad[j] += dy[j] * xh[j];
            if (nbeta.requires_grad) nbeta.grad[j] += dy[j];
          }
          if (!nx.requires_grad) continue;
          const T inv_d = T{1} / static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const T g = dy[j] * ng.data[j];
            nx.grad[r * d + j] += inv_std[r] * (g - inv_d * sum_g - xh[j] * inv_d * sum_gx);
          }
        }
      });
}

template <typename T>
Tensor<T> conv1d_depthwise(const Tensor<T>& x, const Tensor<T>& kernel, bool causal) {
  require_rank(x, 2, "conv1d_depthwise");
  require_rank(kernel, 2, "conv1d_depthwise kernel");
  if (kernel.dim(1) != x.dim(1) || kernel.dim(0) == 0) {
    throw DimensionError("conv1d_depthwise: kernel " + to_string(kernel.shape()) +
                         " does not match input " + to_string(x.shape()));
  }
  const std::size_t steps = x.dim(0), d = x.dim(1), k = kernel.dim(0);
  // Output t reads input t - j + shift for lag j.
  const std::ptrdiff_t shift = causal ? 0 : static_cast<std::ptrdiff_t>((k - 1) / 2);
  std::vector<T> out(steps * d, T{0});
  const auto in = x.data();
  const auto w = kernel.data();
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(j) + shift;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
      const T* xs = in.data() + static_cast<std::size_t>(src) * d;
      const T* wj = w.data() + j * d;
      T* o = out.data() + t * d;
      for (std::size_t c = 0; c < d; ++c) o[c] += wj[c] * xs[c];
    }
  }
  return make_result<T>(
      "conv1d_depthwise", x.shape(), std::move(out), {x, kernel},
      [steps, d, k, shift](Node<T>& self) {
        auto& nx = *self.inputs[0];
        auto& nw = *self.inputs[1];
        if (nx.requires_grad) nx.ensure_grad();
        if (nw.requires_grad) nw.ensure_grad();
        for (std::size_t t = 0; t < steps; ++t) {
          const T* g = self.grad.data() + t * d;
          for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t src =
                static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(j) + shift;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
            const std::size_t s = static_cast<std::size_t>(src);
            for (std::size_t c = 0; c < d; ++c) {
              if (nx.requires_grad) nx.grad[s * d + c] += g[c] * nw.data[j * d + c];
              if (nw.requires_grad) nw.grad[j * d + c] += g[c] * nx.data[s * d + c];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
  require_rank(x, 3, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  require_rank(bias, 1, "conv2d bias");
  const std::size_t H = x.dim(0), W = x.dim(1), cin = x.dim(2);
  const std::size_t kh = weight.dim(0), kw = weight.dim(1), cout = weight.dim(3);
  if (weight.dim(2) != cin || bias.dim(0) != cout || stride == 0) {
    throw DimensionError("conv2d: input " + to_string(x.shape()) + " weight " +
                         to_string(weight.shape()) + " bias " + to_string(bias.shape()));
  }
  if (H + 2 * pad < kh || W + 2 * pad < kw) {
    throw DimensionError("conv2d: input " + to_string(x.shape()) + " smaller than kernel");
  }
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
  const std::size_t patch = kh * kw * cin;
  // im2col: one row per output pixel.
  std::vector<T> cols(Ho * Wo * patch, T{0});
  const auto in = x.data();
  for (std::size_t oh = 0; oh < Ho; ++oh) {
    for (std::size_t ow = 0; ow < Wo; ++ow) {
      T* dst = cols.data() + (oh * Wo + ow) * patch;
      for (std::size_t i = 0; i < kh; ++i) {
        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + i) - static_cast<std::ptrdiff_t>(pad);
        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t j = 0; j < kw; ++j) {
          const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + j) - static_cast<std::ptrdiff_t>(pad);
          if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
          std::copy_n(in.data() + (static_cast<std::size_t>(ih) * W + static_cast<std::size_t>(iw)) * cin, cin,
                      dst + (i * kw + j) * cin);
        }
      }
    }
  }
  std::vector<T> out(Ho * Wo * cout);
  const auto w = weight.data();
  for (std::size_t p = 0; p < Ho * Wo; ++p) {
    T* o = out.data() + p * cout;
    std::copy_n(bias.data().begin(), cout, o);
    const T* c = cols.data() + p * patch;
    for (std::size_t q = 0; q < patch; ++q) {
      const T v = c[q];
      if (v == T{0}) continue;
      const T* wr = w.data() + q * cout;
      for (std::size_t oc = 0; oc < cout; ++oc) o[oc] += v * wr[oc];
    }
  }
  return make_result<T>(
      "conv2d", {Ho, Wo, cout}, std::move(out), {x, weight, bias},
      [=, cols = std::move(cols)](Node<T>& self) {
        auto& nx = *self.inputs[0];
        auto& nw = *self.inputs[1];
        auto& nb = *self.inputs[2];
        const T* dy = self.grad.data();
        if (nb.requires_grad) {
          nb.ensure_grad();
          for (std::size_t p = 0; p < Ho * Wo; ++p)
            for (std::size_t oc = 0; oc < cout; ++oc) nb.grad[oc] += dy[p * cout + oc];
        }
        if (nw.requires_grad) {
          nw.ensure_grad();
          for (std::size_t p = 0; p < Ho * Wo; ++p) {
            const T* c = cols.data() + p * patch;
            const T* g = dy + p * cout;
            for (std::size_t q = 0; q < patch; ++q) {
              const T v = c[q];
              if (v == T{0}) continue;
              T* gw = nw.grad.data() + q * cout;
              for (std::size_t oc = 0; oc < cout; ++oc) gw[oc] += v * g[oc];
            }
          }
        }
        if (nx.requires_grad) {
          nx.ensure_grad();
          std::vector<T> dcol(patch);
          for (std::size_t oh = 0; oh < Ho; ++oh) {
            for (std::size_t ow = 0; ow < Wo; ++ow) {
              const T* g = dy + (oh * Wo + ow) * cout;
              for (std::size_t q = 0; q < patch; ++q) {
                const T* wr = nw.data.data() + q * cout;
                T acc{0};
                for (std::size_t oc = 0; oc < cout; ++oc) acc += g[oc] * wr[oc];
                dcol[q] = acc;
              }
              for (std::size_t i = 0; i < kh; ++i) {
                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + i) - static_cast<std::ptrdiff_t>(pad);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t j = 0; j < kw; ++j) {
                  const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + j) - static_cast<std::ptrdiff_t>(pad);
                  if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                  T* gx = nx.grad.data() + (static_cast<std::size_t>(ih) * W + static_cast<std::size_t>(iw)) * cin;
                  const T* src = dcol.data() + (i * kw + j) * cin;
                  for (std::size_t c = 0; c < cin; ++c) gx[c] += src[c];
                }
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> logsumexp(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("logsumexp: axis " + std::to_string(axis) + " invalid for " +
                         to_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> out(outer * inner);
  const auto in = x.data();
  constexpr T kNegInf = -std::numeric_limits<T>::infinity();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      T m = kNegInf;
      for (std::size_t j = 0; j < n; ++j) m = std::max(m, in[(o * n + j) * inner + i]);
      if (m == kNegInf) {
        out[o * inner + i] = kNegInf;
        continue;
      }
      T acc{0};
      for (std::size_t j = 0; j < n; ++j) acc += std::exp(in[(o * n + j) * inner + i] - m);
      out[o * inner + i] = m + std::log(acc);
    }
  }
  return make_result<T>("logsumexp", std::move(out_shape), std::move(out), {x},
                        [outer, inner, n](Node<T>& self) {
                          auto& nx = *self.inputs[0];
                          if (!nx.requires_grad) return;
                          nx.ensure_grad();
                          for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t i = 0; i < inner; ++i) {
                              const T lse = self.data[o * inner + i];
                              const T g = self.grad[o * inner + i];
                              if (!std::isfinite(lse)) continue;
                              for (std::size_t j = 0; j < n; ++j) {
                                const std::size_t idx = (o * n + j) * inner + i;
                                nx.grad[idx] += g * std::exp(nx.data[idx] - lse);
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  if (x.rank() == 0) throw DimensionError("log_softmax of a scalar");
  const std::size_t d = x.shape().back();
  const std::size_t rows = d == 0 ? 0 : x.size() / d;
  std::vector<T> out(x.size());
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * d;
    const T m = *std::max_element(row, row + d);
    T acc{0};
    for (std::size_t j = 0; j < d; ++j) acc += std::exp(row[j] - m);
    const T lse = m + std::log(acc);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = row[j] - lse;
  }
  return make_result<T>("log_softmax", x.shape(), std::move(out), {x}, [rows, d](Node<T>& self) {
    auto& nx = *self.inputs[0];
    if (!nx.requires_grad) return;
    nx.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* g = self.grad.data() + r * d;
      const T* y = self.data.data() + r * d;
      T gsum{0};
      for (std::size_t j = 0; j < d; ++j) gsum += g[j];
      for (std::size_t j = 0; j < d; ++j) nx.grad[r * d + j] += g[j] - std::exp(y[j]) * gsum;
    }
  });
}

template <typename T>
Tensor<T> glu(const Tensor<T>& x) {
  require_rank(x, 2, "glu");
  if (x.dim(1) % 2 != 0) throw DimensionError("glu: odd width " + to_string(x.shape()));
  const std::size_t half = x.dim(1) / 2;
  return mul(slice_cols(x, 0, half), sigmoid(slice_cols(x, half, 2 * half)));
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::mt19937_64& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw DomainError("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const T factor = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.size());
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = keep(rng) ? factor : T{0};
    out[i] = x.data()[i] * mask[i];
  }
  return make_result<T>("dropout", x.shape(), std::move(out), {x},
                        [mask = std::move(mask)](Node<T>& self) {
                          accumulate(*self.inputs[0], [&](std::size_t i) { return self.grad[i] * mask[i]; });
                        });
}

#define MLMA_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> expand_cols(const Tensor<T>&, std::size_t);                             \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                 \
  template Tensor<T> reverse_rows(const Tensor<T>&);                                         \
  template Tensor<T> sum(const Tensor<T>&);                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                 \
  template Tensor<T> elementwise(Unary, const Tensor<T>&);                                   \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);    \
  template Tensor<T> conv1d_depthwise(const Tensor<T>&, const Tensor<T>&, bool);             \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                            std::size_t, std::size_t);                                       \
  template Tensor<T> logsumexp(const Tensor<T>&, std::size_t);                               \
  template Tensor<T> log_softmax(const Tensor<T>&);                                          \
  template Tensor<T> glu(const Tensor<T>&);                                                  \
  template Tensor<T> dropout(const Tensor<T>&, double, std::mt19937_64&, bool);

MLMA_INSTANTIATE_OPS(float)
MLMA_INSTANTIATE_OPS(double)

}  // namespace mlma

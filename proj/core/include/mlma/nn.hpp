#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mlma/ops.hpp"
#include "mlma/tensor.hpp"

namespace mlma {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

// Carried through a forward pass; dropout draws from rng when training.
struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

template <typename T>
Tensor<T> apply_dropout(const Tensor<T>& x, double rate, const ForwardContext& ctx) {
  if (!ctx.training || rate == 0.0 || ctx.rng == nullptr) return x;
  return dropout(x, rate, *ctx.rng, true);
}

// Trainable leaf with entries drawn from U(-bound, bound).
template <typename T>
Tensor<T> uniform_param(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> data(numel(shape));
  for (auto& v : data) v = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(data), true);
}

template <typename T>
Tensor<T> constant_param(Shape shape, T value) {
  return Tensor<T>::full(std::move(shape), value, true);
}

// y = x . weight + bias with weight stored [in x out].
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;  // undefined when the layer has no bias

  static Linear create(std::size_t in, std::size_t out, bool with_bias, std::mt19937_64& rng) {
    Linear layer;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    layer.weight = uniform_param<T>({in, out}, bound, rng);
    if (with_bias) layer.bias = constant_param<T>({out}, T{0});
    return layer;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto y = matmul(x, weight);
    return bias.defined() ? add_bias(y, bias) : y;
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
  }

  static std::size_t count(std::size_t in, std::size_t out, bool with_bias) {
    return in * out + (with_bias ? out : 0);
  }
};

template <typename T>
std::size_t total_size(const NamedParams<T>& params) {
  std::size_t n = 0;
  for (const auto& [name, tensor] : params) n += tensor.size();
  return n;
}

}  // namespace mlma

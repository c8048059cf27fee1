#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "mlma/tensor.hpp"

namespace mlma::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> data(numel(shape));
  for (auto& v : data) v = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  }
  return worst;
}

// Row-normalized random log-probability lattice [frames x vocab].
inline Tensor<double> random_lattice(std::size_t frames, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  std::vector<double> data(frames * vocab);
  for (std::size_t t = 0; t < frames; ++t) {
    double z = 0.0;
    for (std::size_t k = 0; k < vocab; ++k) {
      data[t * vocab + k] = dist(rng);
      z += std::exp(data[t * vocab + k]);
    }
    for (std::size_t k = 0; k < vocab; ++k) data[t * vocab + k] -= std::log(z);
  }
  return Tensor<double>({frames, vocab}, std::move(data));
}

}  // namespace mlma::testing

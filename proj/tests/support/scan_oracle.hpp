#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "mlma/ssm.hpp"

namespace mlma::testing {

// Owns the buffers behind an ssm::ScanInputs view.
template <typename T>
struct ScanProblem {
  std::size_t steps, channels, states;
  std::vector<T> u, delta, a, b, c;

  ssm::ScanInputs<T> view() const {
    return {steps, channels, states, u, delta, a, b, c};
  }
};

template <typename T>
ScanProblem<T> random_scan_problem(std::size_t steps, std::size_t channels, std::size_t states,
                                   std::mt19937_64& rng) {
  std::uniform_real_distribution<double> sym(-1.0, 1.0), pos(1e-3, 0.5), neg(0.1, 4.0);
  ScanProblem<T> p{steps, channels, states, {}, {}, {}, {}, {}};
  const auto fill = [&](std::vector<T>& v, std::size_t n, auto& dist, double sign) {
    v.resize(n);
    for (auto& x : v) x = static_cast<T>(sign * dist(rng));
  };
  fill(p.u, steps * channels, sym, 1.0);
  fill(p.delta, steps * channels, pos, 1.0);
  fill(p.a, channels * states, neg, -1.0);
  fill(p.b, steps * states, sym, 1.0);
  fill(p.c, steps * states, sym, 1.0);
  return p;
}

// Textbook recurrence in double precision: h = exp(da) h + (expm1(da) / a) b u, y = c . h.
template <typename T>
std::vector<double> reference_scan(const ScanProblem<T>& p) {
  std::vector<double> h(p.channels * p.states, 0.0), y(p.steps * p.channels, 0.0);
  for (std::size_t t = 0; t < p.steps; ++t) {
    for (std::size_t d = 0; d < p.channels; ++d) {
      const double dt = p.delta[t * p.channels + d];
      const double x = p.u[t * p.channels + d];
      double acc = 0.0;
      for (std::size_t n = 0; n < p.states; ++n) {
        const double a = p.a[d * p.states + n];
        double& s = h[d * p.states + n];
        s = std::exp(dt * a) * s + std::expm1(dt * a) / a * static_cast<double>(p.b[t * p.states + n]) * x;
        acc += static_cast<double>(p.c[t * p.states + n]) * s;
      }
      y[t * p.channels + d] = acc;
    }
  }
  return y;
}

}  // namespace mlma::testing

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "mlma/tensor.hpp"

namespace mlma {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries_checked = 0;
};

// Compares tape gradients of `f` against central differences
// (f(x + eps) - f(x - eps)) / (2 eps) for every element of every input.
// `f` must read the given leaves; they are perturbed in place and restored.
// Non-scalar outputs are reduced with a fixed pseudo-random projection.
// Relative error is |a - n| / (|a| + |n| + 1e-12).
GradCheckResult grad_check(const std::function<Tensor<double>()>& f,
                           std::span<Tensor<double>> inputs, double eps = 1e-6);

std::string describe(const GradCheckResult& result);

}  // namespace mlma

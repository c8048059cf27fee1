#include "mlma/grad_check.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "mlma/error.hpp"
#include "mlma/ops.hpp"

namespace mlma {

namespace {

// Fixed weights so repeated evaluations see the same scalar objective.
Tensor<double> project(const Tensor<double>& y) {
  if (y.size() == 1) return y.rank() == 0 ? y : sum(y);
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> dist(0.5, 1.5);
  std::vector<double> w(y.size());
  for (auto& v : w) v = dist(rng);
  return sum(mul(y, Tensor<double>(y.shape(), std::move(w))));
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor<double>()>& f,
                           std::span<Tensor<double>> inputs, double eps) {
  if (eps < 1e-7 || eps > 1e-3) throw ContractError("grad_check: eps must lie in [1e-7, 1e-3]");
  for (auto& in : inputs) {
    if (!in.is_leaf()) throw ContractError("grad_check: inputs must be leaves");
    in.set_requires_grad(true);
    in.zero_grad();
  }
  backward(project(f()));
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) {
    if (in.has_grad()) {
      analytic.emplace_back(in.grad().begin(), in.grad().end());
    } else {
      analytic.emplace_back(in.size(), 0.0);
    }
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double up = project(f()).item();
      data[i] = saved - eps;
      const double down = project(f()).item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      ++result.entries_checked;
      if (rel > result.max_rel_error || result.entries_checked == 1) {
        result.max_rel_error = rel;
        result.worst_input = k;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

std::string describe(const GradCheckResult& r) {
  std::ostringstream os;
  os << "max_rel_err=" << r.max_rel_error << " (input " << r.worst_input << "[" << r.worst_index
     << "] analytic=" << r.analytic << " numeric=" << r.numeric << ", " << r.entries_checked
     << " entries)";
  return os.str();
}

}  // namespace mlma

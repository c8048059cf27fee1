#include "mlma/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mlma/error.hpp"

namespace mlma::ctc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

template <typename T>
void check_lattice(const Tensor<T>& log_probs) {
  if (log_probs.rank() != 2 || log_probs.dim(0) == 0 || log_probs.dim(1) < 2) {
    throw DimensionError("ctc: lattice must be [T x V] with T >= 1 and V >= 2, got " +
                         to_string(log_probs.shape()));
  }
}

}  // namespace

std::vector<TokenId> expand_target(std::span<const TokenId> target) {
  std::vector<TokenId> states(2 * target.size() + 1, kBlankId);
  for (std::size_t i = 0; i < target.size(); ++i) states[2 * i + 1] = target[i];
  return states;
}

std::size_t required_frames(std::span<const TokenId> target) {
  std::size_t repeats = 0;
  for (std::size_t i = 1; i < target.size(); ++i) repeats += target[i] == target[i - 1];
  return target.size() + repeats;
}

void check_target(std::span<const TokenId> target, std::size_t frames, std::size_t vocab) {
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] == kBlankId) {
      throw ValidationError("ctc: target position " + std::to_string(i) + " is the blank id");
    }
    if (target[i] < 0 || static_cast<std::size_t>(target[i]) >= vocab) {
      throw ValidationError("ctc: target id " + std::to_string(target[i]) + " outside vocabulary of " +
                            std::to_string(vocab));
    }
  }
  const std::size_t need = required_frames(target);
  if (frames < need) {
    throw InfeasibleTargetError("ctc: target of length " + std::to_string(target.size()) + " needs at least " +
                                std::to_string(need) + " frames, lattice has " + std::to_string(frames));
  }
}

template <typename T>
ForwardBackward forward_backward(const Tensor<T>& log_probs, std::span<const TokenId> target) {
  check_lattice(log_probs);
  const std::size_t steps = log_probs.dim(0), V = log_probs.dim(1);
  check_target(target, steps, V);
  const auto states = expand_target(target);
  const std::size_t S = states.size();
  const auto lp = [&](std::size_t t, std::size_t s) {
    return static_cast<double>(log_probs.data()[t * V + static_cast<std::size_t>(states[s])]);
  };
  // s -> s + 2 skips a blank only between distinct labels.
  const auto can_skip = [&](std::size_t s) {
    return states[s] != kBlankId && s >= 2 && states[s] != states[s - 2];
  };

  std::vector<double> alpha(steps * S, kNegInf), beta(steps * S, kNegInf);
  alpha[0] = lp(0, 0);
  if (S > 1) alpha[1] = lp(0, 1);
  for (std::size_t t = 1; t < steps; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc = alpha[(t - 1) * S + s];
      if (s >= 1) acc = log_add(acc, alpha[(t - 1) * S + s - 1]);
      if (can_skip(s)) acc = log_add(acc, alpha[(t - 1) * S + s - 2]);
      alpha[t * S + s] = acc == kNegInf ? kNegInf : acc + lp(t, s);
    }
  }
  const std::size_t last = steps - 1;
  double log_z = alpha[last * S + S - 1];
  if (S > 1) log_z = log_add(log_z, alpha[last * S + S - 2]);
  if (log_z == kNegInf) {
    throw InfeasibleTargetError("ctc: target has zero probability under the lattice");
  }

  beta[last * S + S - 1] = 0.0;
  if (S > 1) beta[last * S + S - 2] = 0.0;
  for (std::size_t t = last; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc = beta[(t + 1) * S + s] + lp(t + 1, s);
      if (s + 1 < S) acc = log_add(acc, beta[(t + 1) * S + s + 1] + lp(t + 1, s + 1));
      if (s + 2 < S && can_skip(s + 2)) acc = log_add(acc, beta[(t + 1) * S + s + 2] + lp(t + 1, s + 2));
      beta[t * S + s] = acc;
    }
  }

  ForwardBackward out;
  out.loss = -log_z;
  out.occupancy.assign(steps * V, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      const double joint = alpha[t * S + s] + beta[t * S + s];
      if (joint == kNegInf) continue;
      out.occupancy[t * V + static_cast<std::size_t>(states[s])] += std::exp(joint - log_z);
    }
  }
  return out;
}

template <typename T>
double ctc_loss(const Tensor<T>& log_probs, std::span<const TokenId> target) {
  return forward_backward(log_probs, target).loss;
}

template <typename T>
Tensor<T> ctc_grad(const Tensor<T>& log_probs, std::span<const TokenId> target) {
  const auto fb = forward_backward(log_probs, target);
  const std::size_t steps = log_probs.dim(0), V = log_probs.dim(1);
  std::vector<T> grad(steps * V);
  for (std::size_t t = 0; t < steps; ++t) {
    const T* row = log_probs.data().data() + t * V;
    const double m = static_cast<double>(*std::max_element(row, row + V));
    double z = 0.0;
    for (std::size_t k = 0; k < V; ++k) z += std::exp(static_cast<double>(row[k]) - m);
    for (std::size_t k = 0; k < V; ++k) {
      const double p = std::exp(static_cast<double>(row[k]) - m) / z;
      grad[t * V + k] = static_cast<T>(p - fb.occupancy[t * V + k]);
    }
  }
  return Tensor<T>({steps, V}, std::move(grad));
}

template <typename T>
Tensor<T> ctc_loss_op(const Tensor<T>& log_probs, std::span<const TokenId> target) {
  auto fb = forward_backward(log_probs, target);
  return detail::make_result<T>("ctc_loss", {}, {static_cast<T>(fb.loss)}, {log_probs},
                                [occ = std::move(fb.occupancy)](detail::Node<T>& self) {
                                  auto& in = *self.inputs[0];
                                  if (!in.requires_grad) return;
                                  in.ensure_grad();
                                  const T g = self.grad[0];
                                  for (std::size_t i = 0; i < occ.size(); ++i) {
                                    in.grad[i] -= g * static_cast<T>(occ[i]);
                                  }
                                });
}

template <typename T>
double brute_force_ctc(const Tensor<T>& log_probs, std::span<const TokenId> target, double budget) {
  check_lattice(log_probs);
  const std::size_t steps = log_probs.dim(0), V = log_probs.dim(1);
  const double paths = std::pow(static_cast<double>(V), static_cast<double>(steps));
  if (paths > budget) {
    throw BudgetError("brute_force_ctc: " + std::to_string(V) + "^" + std::to_string(steps) +
                      " paths exceed the enumeration budget");
  }
  for (auto id : target) {
    if (id == kBlankId) throw ValidationError("brute_force_ctc: blank in target");
  }
  std::vector<TokenId> path(steps, 0);
  const std::vector<TokenId> want(target.begin(), target.end());
  double total = kNegInf;
  while (true) {
    if (collapse(path) == want) {
      double lp = 0.0;
      for (std::size_t t = 0; t < steps; ++t) {
        lp += static_cast<double>(log_probs.data()[t * V + static_cast<std::size_t>(path[t])]);
      }
      total = log_add(total, lp);
    }
    std::size_t pos = 0;
    while (pos < steps && static_cast<std::size_t>(++path[pos]) == V) path[pos++] = 0;
    if (pos == steps) break;
  }
  if (total == kNegInf) {
    throw InfeasibleTargetError("brute_force_ctc: no labeling collapses to the target");
  }
  return -total;
}

std::vector<TokenId> collapse(std::span<const TokenId> path) {
  std::vector<TokenId> out;
  TokenId prev = -1;
  for (auto id : path) {
    if (id != prev && id != kBlankId) out.push_back(id);
    prev = id;
  }
  return out;
}

template <typename T>
std::vector<TokenId> greedy_decode(const Tensor<T>& log_probs) {
  check_lattice(log_probs);
  const std::size_t steps = log_probs.dim(0), V = log_probs.dim(1);
  std::vector<TokenId> best(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const T* row = log_probs.data().data() + t * V;
    std::size_t arg = 0;
    for (std::size_t k = 1; k < V; ++k) {
      if (row[k] > row[arg]) arg = k;
    }
    best[t] = static_cast<TokenId>(arg);
  }
  return collapse(best);
}

#define MLMA_INSTANTIATE_CTC(T)                                                           \
  template ForwardBackward forward_backward(const Tensor<T>&, std::span<const TokenId>);  \
  template double ctc_loss(const Tensor<T>&, std::span<const TokenId>);                   \
  template Tensor<T> ctc_grad(const Tensor<T>&, std::span<const TokenId>);                \
  template Tensor<T> ctc_loss_op(const Tensor<T>&, std::span<const TokenId>);             \
  template double brute_force_ctc(const Tensor<T>&, std::span<const TokenId>, double);    \
  template std::vector<TokenId> greedy_decode(const Tensor<T>&);

MLMA_INSTANTIATE_CTC(float)
MLMA_INSTANTIATE_CTC(double)

}  // namespace mlma::ctc

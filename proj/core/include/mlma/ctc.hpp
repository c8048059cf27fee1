#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mlma/tensor.hpp"
#include "mlma/types.hpp"

namespace mlma::ctc {

// blank, t1, blank, t2, ..., blank (2L + 1 states).
std::vector<TokenId> expand_target(std::span<const TokenId> target);

// Minimum frames a target needs: L plus one extra blank per adjacent repeat.
std::size_t required_frames(std::span<const TokenId> target);

// Throws InfeasibleTargetError / ValidationError when the target cannot be
// aligned to `frames` frames of a `vocab`-sized lattice.
void check_target(std::span<const TokenId> target, std::size_t frames, std::size_t vocab);

struct ForwardBackward {
  double loss = 0.0;               // -log p(target | lattice)
  std::vector<double> occupancy;   // [T x V] posterior of emitting k at frame t
};

// Log-space alpha/beta recursions over a [T x V] log-probability lattice
// whose column 0 is the blank.
template <typename T>
ForwardBackward forward_backward(const Tensor<T>& log_probs, std::span<const TokenId> target);

template <typename T>
double ctc_loss(const Tensor<T>& log_probs, std::span<const TokenId> target);

// Gradient of the loss with respect to the pre-softmax logits:
// softmax(row) - occupancy. Rows sum to zero.
template <typename T>
Tensor<T> ctc_grad(const Tensor<T>& log_probs, std::span<const TokenId> target);

// Differentiable scalar loss; the backward rule hands -occupancy to log_probs.
template <typename T>
Tensor<T> ctc_loss_op(const Tensor<T>& log_probs, std::span<const TokenId> target);

inline constexpr double kBruteForceBudget = 1e7;

// Enumerates all V^T frame labelings and sums those collapsing to the target.
// Refuses (BudgetError) when V^T exceeds `budget`.
template <typename T>
double brute_force_ctc(const Tensor<T>& log_probs, std::span<const TokenId> target,
                       double budget = kBruteForceBudget);

// Merge adjacent repeats, then drop blanks.
std::vector<TokenId> collapse(std::span<const TokenId> path);

// Per-frame argmax (ties go to the lowest id), then collapse.
template <typename T>
std::vector<TokenId> greedy_decode(const Tensor<T>& log_probs);

}  // namespace mlma::ctc

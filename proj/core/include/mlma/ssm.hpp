#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mlma/nn.hpp"
#include "mlma/tensor.hpp"

namespace mlma::ssm {

template <typename T>
struct Zoh {
  T a_bar;
  T b_bar;
};

// Zero-order hold for one diagonal entry:
//   a_bar = exp(delta * a)
//   b_bar = ((exp(delta * a) - 1) / a) * b
// The delta * a -> 0 limit (b_bar -> delta * b) is evaluated by series.
template <typename T>
Zoh<T> discretize_zoh(T a, T b, T delta);

// (exp(delta * a) - 1) / a, i.e. b_bar / b.
template <typename T>
T zoh_input_gain(T delta, T a);

// A[D x N], B_t[N], delta_t[D] -> (A_bar[D x N], B_bar[D x N]).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> discretize_zoh(const Tensor<T>& a, const Tensor<T>& b_t,
                                               const Tensor<T>& delta_t);

// Plain-array view of one sequence's scan inputs.
template <typename T>
struct ScanInputs {
  std::size_t steps = 0;
  std::size_t channels = 0;  // d_inner
  std::size_t states = 0;    // n_state
  std::span<const T> u;      // [steps x channels]
  std::span<const T> delta;  // [steps x channels], positive
  std::span<const T> a;      // [channels x states], negative
  std::span<const T> b;      // [steps x states]
  std::span<const T> c;      // [steps x states]

  void validate() const;
};

// Discrete state h[channels x states]; zero at sequence start.
template <typename T>
struct SsmState {
  std::size_t channels = 0;
  std::size_t states = 0;
  std::vector<T> h;

  SsmState(std::size_t d, std::size_t n) : channels(d), states(n), h(d * n, T{0}) {}
};

// Left-to-right recurrence h_t = A_bar h_{t-1} + B_bar x_t, y_t = C_t h_t.
// `history`, when non-empty, receives every h_t as [steps x channels x states].
template <typename T>
void scan_sequential(const ScanInputs<T>& in, std::span<T> y, std::span<T> history = {});

// Same recurrence processed in time blocks of `chunk` steps: the discretized
// coefficients of a block are materialized first, then each channel is
// swept through the block with its state carried to the next block.
template <typename T>
void scan_chunked(const ScanInputs<T>& in, std::size_t chunk, std::span<T> y,
                  std::span<T> history = {});

template <typename T>
struct ScanGrads {
  std::vector<T> du, ddelta, da, db, dc;
};

template <typename T>
ScanGrads<T> scan_backward(const ScanInputs<T>& in, std::span<const T> history,
                           std::span<const T> dy);

// Differentiable selective scan. chunk == 0 selects the sequential kernel.
template <typename T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& a,
                         const Tensor<T>& b, const Tensor<T>& c, std::size_t chunk = 0);

template <typename T>
struct SsmCoreParams {
  Tensor<T> a_log;       // [D x N]; A = -exp(a_log)
  Linear<T> delta_proj;  // D -> 1, no bias; broadcast over channels
  Tensor<T> delta_bias;  // [D]
  Linear<T> b_proj;      // D -> N
  Linear<T> c_proj;      // D -> N

  static SsmCoreParams create(std::size_t channels, std::size_t states, std::mt19937_64& rng);
  static std::size_t count(std::size_t channels, std::size_t states);

  std::size_t channels() const { return a_log.dim(0); }
  std::size_t states() const { return a_log.dim(1); }
  Tensor<T> A() const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

template <typename T>
struct SelectiveParams {
  Tensor<T> b;      // [steps x N]
  Tensor<T> c;      // [steps x N]
  Tensor<T> delta;  // [steps x D]
};

// B_t = f_B(x_t), C_t = f_C(x_t), delta_t = softplus(f_delta(x_t) + delta_bias).
// Accepts x[steps x D] or a single x_t[D].
template <typename T>
SelectiveParams<T> selective_params(const Tensor<T>& x, const SsmCoreParams<T>& core);

template <typename T>
Tensor<T> ssm_scan_sequential(const Tensor<T>& x, const SsmCoreParams<T>& core);
template <typename T>
Tensor<T> ssm_scan_chunked(const Tensor<T>& x, const SsmCoreParams<T>& core, std::size_t chunk);

struct MambaConfig {
  std::size_t d_model = 256;
  std::size_t n_state = 16;
  std::size_t expand = 2;
  std::size_t d_conv = 4;

  std::size_t d_inner() const { return expand * d_model; }
};

template <typename T>
struct MambaBlockParams {
  Linear<T> in_proj;      // d_model -> 2 d_inner (stream | gate), no bias
  Tensor<T> conv_kernel;  // [d_conv x d_inner], causal
  Tensor<T> conv_bias;    // [d_inner]
  SsmCoreParams<T> core;
  Linear<T> out_proj;  // d_inner -> d_model, no bias

  static MambaBlockParams create(const MambaConfig& cfg, std::mt19937_64& rng);
  static std::size_t count(const MambaConfig& cfg);
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

// in_proj -> split(stream, gate); stream -> causal conv -> SiLU -> selective
// scan; gated by SiLU(gate); out_proj.
template <typename T>
Tensor<T> mamba_block(const Tensor<T>& x, const MambaBlockParams<T>& p, std::size_t chunk = 0);

// mamba_block(x; fwd) + reverse_time(mamba_block(reverse_time(x); bwd)).
template <typename T>
Tensor<T> bimamba(const Tensor<T>& x, const MambaBlockParams<T>& fwd, const MambaBlockParams<T>& bwd,
                  std::size_t chunk = 0);

}  // namespace mlma::ssm

#include "mlma/ssm.hpp"

#include <algorithm>
#include <cmath>

#include "mlma/error.hpp"
#include "mlma/ops.hpp"

namespace mlma::ssm {

namespace {

constexpr double kSeriesThreshold = 1e-4;

// expm1(z) / z
template <typename T>
T phi(T z) {
  if (std::abs(z) < T(kSeriesThreshold)) return T{1} + z / T{2} + z * z / T{6};
  return std::expm1(z) / z;
}

// Both ZOH factors of z = delta * a from a single expm1: e^z and expm1(z) / z.
template <typename T>
struct ZohTerms {
  T abar;
  T phi;
  T em1;
};

template <typename T>
inline ZohTerms<T> zoh_terms(T z) {
  const T em1 = std::expm1(z);
  const T ph = std::abs(z) < T(kSeriesThreshold) ? T{1} + z / T{2} + z * z / T{6} : em1 / z;
  return {em1 + T{1}, ph, em1};
}

// (z e^z - e^z + 1) / z^2, the a-derivative factor of the input gain.
template <typename T>
inline T psi_from(T z, const ZohTerms<T>& k) {
  if (std::abs(z) < T(kSeriesThreshold)) return T(0.5) + z / T{3} + z * z / T{8};
  return (z * k.abar - k.em1) / (z * z);
}

}  // namespace

template <typename T>
T zoh_input_gain(T delta, T a) {
  return delta * phi(delta * a);
}

template <typename T>
Zoh<T> discretize_zoh(T a, T b, T delta) {
  const auto k = zoh_terms(delta * a);
  return {k.abar, delta * k.phi * b};
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> discretize_zoh(const Tensor<T>& a, const Tensor<T>& b_t,
                                               const Tensor<T>& delta_t) {
  if (a.rank() != 2 || b_t.rank() != 1 || delta_t.rank() != 1 || b_t.dim(0) != a.dim(1) ||
      delta_t.dim(0) != a.dim(0)) {
    throw DimensionError("discretize_zoh: A " + to_string(a.shape()) + " B " + to_string(b_t.shape()) +
                         " delta " + to_string(delta_t.shape()));
  }
  const std::size_t d = a.dim(0), n = a.dim(1);
  std::vector<T> abar(d * n), bbar(d * n);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto z = discretize_zoh(a.data()[i * n + j], b_t.data()[j], delta_t.data()[i]);
      abar[i * n + j] = z.a_bar;
      bbar[i * n + j] = z.b_bar;
    }
  }
  return {Tensor<T>({d, n}, std::move(abar)), Tensor<T>({d, n}, std::move(bbar))};
}

template <typename T>
void ScanInputs<T>::validate() const {
  const bool ok = u.size() == steps * channels && delta.size() == steps * channels &&
                  a.size() == channels * states && b.size() == steps * states &&
                  c.size() == steps * states;
  if (!ok) {
    throw DimensionError("scan inputs inconsistent with steps=" + std::to_string(steps) +
                         " channels=" + std::to_string(channels) + " states=" + std::to_string(states));
  }
  for (std::size_t i = 0; i < delta.size(); ++i) {
    if (!(delta[i] > T{0})) throw DomainError("scan: delta must be positive (index " + std::to_string(i) + ")");
  }
}

namespace {

template <typename T>
void check_outputs(const ScanInputs<T>& in, std::span<T> y, std::span<T> history) {
  in.validate();
  if (y.size() != in.steps * in.channels) throw DimensionError("scan output has the wrong size");
  if (!history.empty() && history.size() != in.steps * in.channels * in.states) {
    throw DimensionError("scan history has the wrong size");
  }
}

}  // namespace

template <typename T>
void scan_sequential(const ScanInputs<T>& in, std::span<T> y, std::span<T> history) {
  check_outputs(in, y, history);
  const std::size_t D = in.channels, N = in.states;
  SsmState<T> state(D, N);
  for (std::size_t t = 0; t < in.steps; ++t) {
    const T* bt = in.b.data() + t * N;
    const T* ct = in.c.data() + t * N;
    for (std::size_t d = 0; d < D; ++d) {
      const T x = in.u[t * D + d];
      const T dt = in.delta[t * D + d];
      const T* ad = in.a.data() + d * N;
      T* h = state.h.data() + d * N;
      T acc{0};
      for (std::size_t n = 0; n < N; ++n) {
        const auto k = zoh_terms(dt * ad[n]);
        h[n] = k.abar * h[n] + dt * k.phi * bt[n] * x;
        acc += ct[n] * h[n];
      }
      y[t * D + d] = acc;
      if (!history.empty()) std::copy_n(h, N, history.data() + (t * D + d) * N);
    }
  }
}

template <typename T>
void scan_chunked(const ScanInputs<T>& in, std::size_t chunk, std::span<T> y, std::span<T> history) {
  check_outputs(in, y, history);
  if (chunk == 0) throw ContractError("scan_chunked: chunk must be at least 1");
  const std::size_t D = in.channels, N = in.states;
  SsmState<T> state(D, N);
  const std::size_t block = std::min(chunk, std::max<std::size_t>(in.steps, 1));
  std::vector<T> abar(block * D * N), bbar(block * D * N);
  for (std::size_t t0 = 0; t0 < in.steps; t0 += chunk) {
    const std::size_t len = std::min(chunk, in.steps - t0);
    for (std::size_t k = 0; k < len; ++k) {
      const std::size_t t = t0 + k;
      const T* bt = in.b.data() + t * N;
      for (std::size_t d = 0; d < D; ++d) {
        const T dt = in.delta[t * D + d];
        const T* ad = in.a.data() + d * N;
        T* ab = abar.data() + (k * D + d) * N;
        T* bb = bbar.data() + (k * D + d) * N;
        for (std::size_t n = 0; n < N; ++n) {
          const auto z = zoh_terms(dt * ad[n]);
          ab[n] = z.abar;
          bb[n] = dt * z.phi * bt[n];
        }
      }
    }
    for (std::size_t d = 0; d < D; ++d) {
      T* h = state.h.data() + d * N;
      for (std::size_t k = 0; k < len; ++k) {
        const std::size_t t = t0 + k;
        const T x = in.u[t * D + d];
        const T* ct = in.c.data() + t * N;
        const T* ab = abar.data() + (k * D + d) * N;
        const T* bb = bbar.data() + (k * D + d) * N;
        T acc{0};
        for (std::size_t n = 0; n < N; ++n) {
          h[n] = ab[n] * h[n] + bb[n] * x;
          acc += ct[n] * h[n];
        }
        y[t * D + d] = acc;
        if (!history.empty()) std::copy_n(h, N, history.data() + (t * D + d) * N);
      }
    }
  }
}

template <typename T>
ScanGrads<T> scan_backward(const ScanInputs<T>& in, std::span<const T> history, std::span<const T> dy) {
  in.validate();
  const std::size_t steps = in.steps, D = in.channels, N = in.states;
  if (history.size() != steps * D * N || dy.size() != steps * D) {
    throw DimensionError("scan_backward: history or upstream gradient has the wrong size");
  }
  ScanGrads<T> g;
  g.du.assign(steps * D, T{0});
  g.ddelta.assign(steps * D, T{0});
  g.da.assign(D * N, T{0});
  g.db.assign(steps * N, T{0});
  g.dc.assign(steps * N, T{0});
  std::vector<T> carry(D * N, T{0});  // dL/dh_t flowing back from t+1
  for (std::size_t t = steps; t-- > 0;) {
    const T* bt = in.b.data() + t * N;
    const T* ct = in.c.data() + t * N;
    for (std::size_t d = 0; d < D; ++d) {
      const T gy = dy[t * D + d];
      const T x = in.u[t * D + d];
      const T dt = in.delta[t * D + d];
      const T* ad = in.a.data() + d * N;
      const T* h = history.data() + (t * D + d) * N;
      const T* hprev = t > 0 ? history.data() + ((t - 1) * D + d) * N : nullptr;
      T* cr = carry.data() + d * N;
      T du{0}, ddelta{0};
      for (std::size_t n = 0; n < N; ++n) {
        g.dc[t * N + n] += gy * h[n];
        const T gh = cr[n] + ct[n] * gy;
        const T a = ad[n];
        const T z = dt * a;
        const auto k = zoh_terms(z);
        const T abar = k.abar;
        const T gain = dt * k.phi;
        const T hp = hprev ? hprev[n] : T{0};
        const T d_abar = gh * hp;
        const T d_bbar = gh * x;
        du += gh * gain * bt[n];
        g.db[t * N + n] += d_bbar * gain;
        const T d_gain = d_bbar * bt[n];
        ddelta += d_abar * abar * a + d_gain * abar;
        g.da[d * N + n] += d_abar * abar * dt + d_gain * dt * dt * psi_from(z, k);
        cr[n] = gh * abar;
      }
      g.du[t * D + d] += du;
      g.ddelta[t * D + d] += ddelta;
    }
  }
  return g;
}

template <typename T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& a,
                         const Tensor<T>& b, const Tensor<T>& c, std::size_t chunk) {
  if (u.rank() != 2 || delta.shape() != u.shape() || a.rank() != 2 || a.dim(0) != u.dim(1) ||
      b.rank() != 2 || c.shape() != b.shape() || b.dim(0) != u.dim(0) || b.dim(1) != a.dim(1)) {
    throw DimensionError("selective_scan: u " + to_string(u.shape()) + " delta " + to_string(delta.shape()) +
                         " A " + to_string(a.shape()) + " B " + to_string(b.shape()) + " C " +
                         to_string(c.shape()));
  }
  const std::size_t steps = u.dim(0), D = u.dim(1), N = a.dim(1);
  ScanInputs<T> in{steps, D, N, u.data(), delta.data(), a.data(), b.data(), c.data()};
  std::vector<T> y(steps * D);
  const bool record = grad_enabled() && (u.requires_grad() || delta.requires_grad() || a.requires_grad() ||
                                         b.requires_grad() || c.requires_grad());
  std::vector<T> history(record ? steps * D * N : 0);
  if (chunk == 0) {
    scan_sequential<T>(in, y, history);
  } else {
    scan_chunked<T>(in, chunk, y, history);
  }
  return detail::make_result<T>(
      "selective_scan", {steps, D}, std::move(y), {u, delta, a, b, c},
      [steps, D, N, history = std::move(history)](detail::Node<T>& self) {
        auto& nu = *self.inputs[0];
        auto& nd = *self.inputs[1];
        auto& na = *self.inputs[2];
        auto& nb = *self.inputs[3];
        auto& nc = *self.inputs[4];
        ScanInputs<T> in{steps, D, N, nu.data, nd.data, na.data, nb.data, nc.data};
        const auto g = scan_backward<T>(in, history, self.grad);
        const auto add_into = [](detail::Node<T>& node, const std::vector<T>& src) {
          if (!node.requires_grad) return;
          node.ensure_grad();
          for (std::size_t i = 0; i < src.size(); ++i) node.grad[i] += src[i];
        };
        add_into(nu, g.du);
        add_into(nd, g.ddelta);
        add_into(na, g.da);
        add_into(nb, g.db);
        add_into(nc, g.dc);
      });
}

template <typename T>
SsmCoreParams<T> SsmCoreParams<T>::create(std::size_t channels, std::size_t states, std::mt19937_64& rng) {
  SsmCoreParams p;
  // -A spans [1, N] geometrically for every channel.
  std::vector<T> a_log(channels * states);
  for (std::size_t d = 0; d < channels; ++d) {
    for (std::size_t n = 0; n < states; ++n) {
      const double frac = states > 1 ? static_cast<double>(n) / static_cast<double>(states - 1) : 0.0;
      a_log[d * states + n] = static_cast<T>(frac * std::log(static_cast<double>(states)));
    }
  }
  p.a_log = Tensor<T>({channels, states}, std::move(a_log), true);
  p.delta_proj = Linear<T>::create(channels, 1, false, rng);
  // softplus(delta_bias) log-uniform in [1e-3, 1e-1].
  std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
  std::vector<T> bias(channels);
  for (auto& v : bias) {
    const double dt = std::exp(log_dt(rng));
    v = static_cast<T>(dt + std::log(-std::expm1(-dt)));
  }
  p.delta_bias = Tensor<T>({channels}, std::move(bias), true);
  p.b_proj = Linear<T>::create(channels, states, true, rng);
  p.c_proj = Linear<T>::create(channels, states, true, rng);
  return p;
}

template <typename T>
std::size_t SsmCoreParams<T>::count(std::size_t channels, std::size_t states) {
  return channels * states + Linear<T>::count(channels, 1, false) + channels +
         2 * Linear<T>::count(channels, states, true);
}

template <typename T>
Tensor<T> SsmCoreParams<T>::A() const {
  return scale(exp(a_log), T{-1});
}

template <typename T>
void SsmCoreParams<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  out.emplace_back(prefix + ".a_log", a_log);
  delta_proj.collect(prefix + ".delta_proj", out);
  out.emplace_back(prefix + ".delta_bias", delta_bias);
  b_proj.collect(prefix + ".b_proj", out);
  c_proj.collect(prefix + ".c_proj", out);
}

template <typename T>
SelectiveParams<T> selective_params(const Tensor<T>& x, const SsmCoreParams<T>& core) {
  if (x.rank() == 1) {
    auto p = selective_params(x.reshape({1, x.dim(0)}), core);
    return {p.b.reshape({p.b.size()}), p.c.reshape({p.c.size()}), p.delta.reshape({p.delta.size()})};
  }
  if (x.rank() != 2 || x.dim(1) != core.channels()) {
    throw DimensionError("selective_params: x " + to_string(x.shape()) + " for " +
                         std::to_string(core.channels()) + " channels");
  }
  SelectiveParams<T> p;
  p.b = core.b_proj(x);
  p.c = core.c_proj(x);
  p.delta = softplus(add_bias(expand_cols(core.delta_proj(x), core.channels()), core.delta_bias));
  return p;
}

template <typename T>
Tensor<T> ssm_scan_sequential(const Tensor<T>& x, const SsmCoreParams<T>& core) {
  const auto p = selective_params(x, core);
  return selective_scan(x, p.delta, core.A(), p.b, p.c, 0);
}

template <typename T>
Tensor<T> ssm_scan_chunked(const Tensor<T>& x, const SsmCoreParams<T>& core, std::size_t chunk) {
  if (chunk == 0) throw ContractError("ssm_scan_chunked: chunk must be at least 1");
  const auto p = selective_params(x, core);
  return selective_scan(x, p.delta, core.A(), p.b, p.c, chunk);
}

template <typename T>
MambaBlockParams<T> MambaBlockParams<T>::create(const MambaConfig& cfg, std::mt19937_64& rng) {
  const std::size_t di = cfg.d_inner();
  MambaBlockParams p;
  p.in_proj = Linear<T>::create(cfg.d_model, 2 * di, false, rng);
  p.conv_kernel = uniform_param<T>({cfg.d_conv, di}, 1.0 / std::sqrt(static_cast<double>(cfg.d_conv)), rng);
  p.conv_bias = constant_param<T>({di}, T{0});
  p.core = SsmCoreParams<T>::create(di, cfg.n_state, rng);
  p.out_proj = Linear<T>::create(di, cfg.d_model, false, rng);
  return p;
}

template <typename T>
std::size_t MambaBlockParams<T>::count(const MambaConfig& cfg) {
  const std::size_t di = cfg.d_inner();
  return Linear<T>::count(cfg.d_model, 2 * di, false) + cfg.d_conv * di + di +
         SsmCoreParams<T>::count(di, cfg.n_state) + Linear<T>::count(di, cfg.d_model, false);
}

template <typename T>
void MambaBlockParams<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  in_proj.collect(prefix + ".in_proj", out);
  out.emplace_back(prefix + ".conv.weight", conv_kernel);
  out.emplace_back(prefix + ".conv.bias", conv_bias);
  core.collect(prefix + ".ssm", out);
  out_proj.collect(prefix + ".out_proj", out);
}

template <typename T>
Tensor<T> mamba_block(const Tensor<T>& x, const MambaBlockParams<T>& p, std::size_t chunk) {
  const std::size_t di = p.core.channels();
  const auto xz = p.in_proj(x);
  const auto stream = slice_cols(xz, 0, di);
  const auto gate = slice_cols(xz, di, 2 * di);
  const auto conv = silu(add_bias(conv1d_depthwise(stream, p.conv_kernel, true), p.conv_bias));
  const auto sel = selective_params(conv, p.core);
  const auto y = selective_scan(conv, sel.delta, p.core.A(), sel.b, sel.c, chunk);
  return p.out_proj(mul(y, silu(gate)));
}

template <typename T>
Tensor<T> bimamba(const Tensor<T>& x, const MambaBlockParams<T>& fwd, const MambaBlockParams<T>& bwd,
                  std::size_t chunk) {
  return add(mamba_block(x, fwd, chunk), reverse_rows(mamba_block(reverse_rows(x), bwd, chunk)));
}

#define MLMA_INSTANTIATE_SSM(T)                                                                         \
  template T zoh_input_gain(T, T);                                                                      \
  template Zoh<T> discretize_zoh(T, T, T);                                                              \
  template std::pair<Tensor<T>, Tensor<T>> discretize_zoh(const Tensor<T>&, const Tensor<T>&,          \
                                                          const Tensor<T>&);                            \
  template struct ScanInputs<T>;                                                                        \
  template void scan_sequential(const ScanInputs<T>&, std::span<T>, std::span<T>);                      \
  template void scan_chunked(const ScanInputs<T>&, std::size_t, std::span<T>, std::span<T>);            \
  template ScanGrads<T> scan_backward(const ScanInputs<T>&, std::span<const T>, std::span<const T>);    \
  template Tensor<T> selective_scan(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,               \
                                    const Tensor<T>&, const Tensor<T>&, std::size_t);                   \
  template struct SsmCoreParams<T>;                                                                     \
  template SelectiveParams<T> selective_params(const Tensor<T>&, const SsmCoreParams<T>&);              \
  template Tensor<T> ssm_scan_sequential(const Tensor<T>&, const SsmCoreParams<T>&);                    \
  template Tensor<T> ssm_scan_chunked(const Tensor<T>&, const SsmCoreParams<T>&, std::size_t);          \
  template struct MambaBlockParams<T>;                                                                  \
  template Tensor<T> mamba_block(const Tensor<T>&, const MambaBlockParams<T>&, std::size_t);            \
  template Tensor<T> bimamba(const Tensor<T>&, const MambaBlockParams<T>&, const MambaBlockParams<T>&,  \
                             std::size_t);

MLMA_INSTANTIATE_SSM(float)
MLMA_INSTANTIATE_SSM(double)

}  // namespace mlma::ssm

#pragma once

// Discrete-time kernels shared by every layer. States decay with the exact
// exponential factor exp(-dt/tau); inputs and spikes are added undecayed in
// the step they occur.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace flysnn {

struct NeuronParams {
    double tau_m = 10.0;  // ms
    double v_th = 0.8;
    double dt = 1.0;      // ms
    double i_bias = 0.0;

    double beta() const { return std::exp(-dt / tau_m); }
    void validate() const;  // throws ConfigError
};

struct LifStep {
    double v = 0.0;      // post-reset potential
    bool spike = false;
    double u_pre = 0.0;  // pre-reset potential
};

// Soft-reset LIF update. `i_total` already contains input, bias, SFA and LI
// currents. Throws NumericError on non-finite input.
LifStep lif_step(double v_prev, double i_total, const NeuronParams& params);

// Same update with beta precomputed, for inner loops. No finiteness check.
inline LifStep lif_step_fast(double v_prev, double i_total, double beta, double v_th) noexcept {
    const double u = beta * v_prev + i_total;
    const bool spike = u >= v_th;
    return {spike ? u - v_th : u, spike, u};
}

struct SfaState {
    std::vector<double> a;  // per-neuron accumulator, >= 0
    double decay = 0.0;     // exp(-dt/tau_sfa)

    SfaState() = default;
    SfaState(std::size_t n, double tau_sfa, double dt);
};

// A <- decay*A + spikes.
void sfa_update(SfaState& state, std::span<const std::uint8_t> spikes);

// out = w_sfa * A. Throws ConfigError when w_sfa > 0.
void sfa_current(const SfaState& state, double w_sfa, std::span<double> out);

struct LiTraceState {
    std::vector<double> t;  // per-LN trace, >= 0
    double decay = 0.0;     // exp(-dt/tau_trace)

    LiTraceState() = default;
    LiTraceState(std::size_t n_ln, double tau_trace, double dt);
};

// T <- decay*T + ln_spikes.
void li_trace_update(LiTraceState& state, std::span<const std::uint8_t> ln_spikes);

// out[j] = sum_k w_ln_pn[j*n_ln + k] * T[k]; w_ln_pn is row-major
// [n_pn x n_ln]. Throws ConfigError on any positive weight.
void li_current(const LiTraceState& state, std::span<const double> w_ln_pn, std::span<double> out);

struct SurrogateParams {
    double k1 = 1.0;
    double k2 = 2.0;

    void validate() const;
};

// Arctan-family surrogate for the Heaviside derivative: k1 / (1 + (k2 u)^2).
inline double surrogate_grad(double u, const SurrogateParams& p) noexcept {
    const double x = p.k2 * u;
    return p.k1 / (1.0 + x * x);
}

}  // namespace flysnn

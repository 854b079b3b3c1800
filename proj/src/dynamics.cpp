#include "flysnn/dynamics.hpp"

#include <string>

#include "flysnn/errors.hpp"

namespace flysnn {

void NeuronParams::validate() const {
    if (!(tau_m > 0.0)) throw ConfigError("tau_m must be positive");
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (!(v_th > 0.0)) throw ConfigError("v_th must be positive");
    if (!std::isfinite(i_bias)) throw ConfigError("i_bias must be finite");
}

LifStep lif_step(double v_prev, double i_total, const NeuronParams& params) {
    if (!std::isfinite(v_prev) || !std::isfinite(i_total)) {
        throw NumericError("lif_step received a non-finite value");
    }
    return lif_step_fast(v_prev, i_total, params.beta(), params.v_th);
}

SfaState::SfaState(std::size_t n, double tau_sfa, double dt)
    : a(n, 0.0), decay(std::exp(-dt / tau_sfa)) {}

void sfa_update(SfaState& state, std::span<const std::uint8_t> spikes) {
    for (std::size_t i = 0; i < state.a.size(); ++i) {
        state.a[i] = state.decay * state.a[i] + static_cast<double>(spikes[i]);
    }
}

void sfa_current(const SfaState& state, double w_sfa, std::span<double> out) {
    if (w_sfa > 0.0) throw ConfigError("SFA weight must be <= 0");
    for (std::size_t i = 0; i < state.a.size(); ++i) out[i] = w_sfa * state.a[i];
}

LiTraceState::LiTraceState(std::size_t n_ln, double tau_trace, double dt)
    : t(n_ln, 0.0), decay(std::exp(-dt / tau_trace)) {}

void li_trace_update(LiTraceState& state, std::span<const std::uint8_t> ln_spikes) {
    for (std::size_t k = 0; k < state.t.size(); ++k) {
        state.t[k] = state.decay * state.t[k] + static_cast<double>(ln_spikes[k]);
    }
}

void li_current(const LiTraceState& state, std::span<const double> w_ln_pn, std::span<double> out) {
    const std::size_t n_ln = state.t.size();
    if (w_ln_pn.size() != out.size() * n_ln) throw ConfigError("LN->PN weight shape mismatch");
    for (std::size_t j = 0; j < out.size(); ++j) {
        double sum = 0.0;
        for (std::size_t k = 0; k < n_ln; ++k) {
            const double w = w_ln_pn[j * n_ln + k];
            if (w > 0.0) {
                throw ConfigError("LN->PN weight [" + std::to_string(j) + "," + std::to_string(k) +
                                  "] is positive");
            }
            sum += w * state.t[k];
        }
        out[j] = sum;
    }
}

void SurrogateParams::validate() const {
    if (!(k1 > 0.0) || !(k2 > 0.0)) throw ConfigError("surrogate constants must be positive");
}

}  // namespace flysnn

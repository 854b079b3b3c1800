#include "flysnn/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "flysnn/container.hpp"
#include "flysnn/dynamics.hpp"
#include "flysnn/errors.hpp"

namespace flysnn {

namespace {

std::uint32_t steps_of(double duration, double dt, const char* what) {
    const double n = duration / dt;
    const double rounded = std::round(n);
    if (!(n >= 0.0) || std::abs(n - rounded) > 1e-9) {
        throw ConfigError(std::string(what) + " is not a whole multiple of dt");
    }
    return static_cast<std::uint32_t>(rounded);
}

// One soft-reset LIF layer with optional adaptation.
struct Layer {
    std::vector<double> v;
    std::vector<double> input;
    std::vector<std::uint8_t> spikes;
    SfaState sfa;

    Layer(std::size_t n, double tau_sfa, double dt) : v(n, 0.0), input(n, 0.0), spikes(n, 0), sfa(n, tau_sfa, dt) {}

    // input[] must already hold drive + bias + LI; adds the SFA current from
    // the accumulator as it stood before this step, integrates, and feeds the
    // new spikes back into the accumulator. Returns the spike count.
    std::uint64_t step(double beta, double v_th, double w_sfa) {
        std::uint64_t count = 0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const LifStep r = lif_step_fast(v[i], input[i] + w_sfa * sfa.a[i], beta, v_th);
            v[i] = r.v;
            spikes[i] = r.spike ? 1 : 0;
            count += spikes[i];
        }
        if (w_sfa != 0.0) sfa_update(sfa, spikes);
        return count;
    }
};

}  // namespace

std::uint32_t TrialProtocol::baseline_steps() const { return steps_of(t_baseline, dt, "t_baseline"); }
std::uint32_t TrialProtocol::stimulus_steps() const { return steps_of(t_stim, dt, "t_stim"); }

void TrialProtocol::validate() const {
    if (!(dt > 0.0)) throw ConfigError("protocol dt must be positive");
    if (stimulus_steps() == 0) throw ConfigError("stimulus window must be non-empty");
    baseline_steps();
}

SpikeRaster::SpikeRaster(std::uint32_t n_steps, std::uint32_t n_cols) : n_steps_(n_steps), n_cols_(n_cols) {
    offsets_.reserve(n_steps + 1);
}

void SpikeRaster::set_step(std::uint32_t step, std::span<const std::uint8_t> spikes) {
    if (step != filled_ || step >= n_steps_) throw ContractError("raster steps must be filled in order");
    for (std::uint32_t c = 0; c < n_cols_; ++c) {
        if (spikes[c]) indices_.push_back(c);
    }
    offsets_.push_back(indices_.size());
    ++filled_;
}

bool SpikeRaster::at(std::uint32_t step, std::uint32_t col) const {
    const auto a = active(step);
    return std::binary_search(a.begin(), a.end(), col);
}

std::vector<std::uint8_t> SpikeRaster::dense() const {
    std::vector<std::uint8_t> out(std::size_t(n_steps_) * n_cols_, 0);
    for (std::uint32_t t = 0; t < filled_; ++t) {
        for (std::uint32_t c : active(t)) out[std::size_t(t) * n_cols_ + c] = 1;
    }
    return out;
}

SpikeRaster SpikeRaster::from_dense(std::uint32_t n_steps, std::uint32_t n_cols,
                                    std::span<const std::uint8_t> dense) {
    SpikeRaster r(n_steps, n_cols);
    for (std::uint32_t t = 0; t < n_steps; ++t) r.set_step(t, dense.subspan(std::size_t(t) * n_cols, n_cols));
    return r;
}

namespace {

UpstreamActivity simulate_upstream_impl(const OdorSample& sample, const WeightSet& weights,
                                        const CircuitConfig& config, const TrialProtocol& protocol,
                                        const DatasetConfig* noise, bool stop_after_pn) {
    if (sample.intensities.size() != config.n_orn) {
        throw ConfigError("sample has " + std::to_string(sample.intensities.size()) +
                          " ORN intensities, circuit expects " + std::to_string(config.n_orn));
    }
    if (std::abs(protocol.dt - config.dt) > 1e-12) throw ConfigError("protocol dt differs from circuit dt");

    const double dt = config.dt;
    const double beta = std::exp(-dt / config.tau_m);
    const double v_th = config.v_th;
    const double w_sfa = config.w_sfa();
    const double bias = config.bias();
    const double pn_gain = config.pn_drive_gain() * weights.w_orn_pn;
    const bool li_on = config.enable_li;
    const std::uint32_t n_orn = config.n_orn, n_ln = config.n_ln, n_pn = config.n_pn, n_kc = config.n_kc;

    Layer orn(n_orn, config.tau_sfa, dt);
    Layer ln(n_ln, config.tau_sfa, dt);
    Layer pn(n_pn, config.tau_sfa, dt);
    Layer kc(stop_after_pn ? 0 : n_kc, config.tau_sfa, dt);
    LiTraceState trace(n_ln, config.tau_trace, dt);
    std::vector<double> li(n_pn, 0.0);
    std::vector<std::uint8_t> kc_ever(kc.v.size(), 0);

    std::optional<OuNoiseStream> ou;
    if (noise && noise->noise_kind == NoiseKind::ou) {
        if (noise->n_orn != config.n_orn) throw ConfigError("dataset n_orn differs from circuit n_orn");
        ou.emplace(sample, *noise);
    }

    const std::uint32_t n_steps = protocol.n_steps();
    const std::uint32_t stim_start = protocol.baseline_steps();
    UpstreamActivity out;
    out.kc_spikes = SpikeRaster(n_steps, stop_after_pn ? 0 : n_kc);

    for (std::uint32_t t = 0; t < n_steps; ++t) {
        const bool stim = t >= stim_start;

        if (stim && ou) {
            const std::vector<double>& y = ou->next();
            for (std::uint32_t j = 0; j < n_orn; ++j) {
                orn.input[j] = config.orn_gain * std::max(0.0, static_cast<double>(sample.intensities[j]) + y[j]);
            }
        } else {
            for (std::uint32_t j = 0; j < n_orn; ++j) {
                orn.input[j] = stim ? config.orn_gain * static_cast<double>(sample.intensities[j]) : 0.0;
            }
        }
        // ORNs carry neither bias nor adaptation.
        out.counts.orn += orn.step(beta, v_th, 0.0);

        for (std::uint32_t k = 0; k < n_ln; ++k) {
            const double* w = weights.w_orn_ln.row(k);
            double drive = 0.0;
            for (std::uint32_t j = 0; j < n_orn; ++j) drive += w[j] * orn.spikes[j];
            ln.input[k] = drive + bias;
        }
        out.counts.ln += ln.step(beta, v_th, w_sfa);
        li_trace_update(trace, ln.spikes);

        if (li_on) li_current(trace, weights.w_ln_pn.data, li);
        for (std::uint32_t j = 0; j < n_pn; ++j) {
            pn.input[j] = pn_gain * orn.spikes[j] + bias + li[j];
        }
        const std::uint64_t pn_count = pn.step(beta, v_th, w_sfa);
        out.counts.pn += pn_count;
        if (stim) out.counts.pn_stimulus += pn_count;

        if (stop_after_pn) continue;

        for (std::uint32_t i = 0; i < n_kc; ++i) {
            unsigned active = 0;
            for (std::uint32_t p : weights.inputs_of_kc(i)) active += pn.spikes[p];
            kc.input[i] = weights.w_pn_kc * active;
        }
        out.counts.kc += kc.step(beta, v_th, w_sfa);
        out.kc_spikes.set_step(t, kc.spikes);
        if (stim) {
            for (std::uint32_t i = 0; i < n_kc; ++i) kc_ever[i] |= kc.spikes[i];
        }
    }

    if (!stop_after_pn) {
        std::size_t coding = 0;
        for (std::uint8_t e : kc_ever) coding += e;
        out.kc_coding_level = static_cast<double>(coding) / n_kc;
    }
    return out;
}

}  // namespace

UpstreamActivity simulate_upstream(const OdorSample& sample, const WeightSet& weights,
                                   const CircuitConfig& config, const TrialProtocol& protocol,
                                   const DatasetConfig* noise) {
    return simulate_upstream_impl(sample, weights, config, protocol, noise, false);
}

MbonTrace simulate_mbon(const SpikeRaster& kc_spikes, const Matrix& w_kc_mbon, const CircuitConfig& config) {
    if (w_kc_mbon.cols != kc_spikes.n_cols()) throw ConfigError("KC->MBON weight columns differ from KC count");
    const double beta = std::exp(-config.dt / config.tau_m);
    const double v_th = config.v_th_mbon;
    MbonTrace tr;
    tr.n_steps = kc_spikes.n_steps();
    tr.n_mbon = static_cast<std::uint32_t>(w_kc_mbon.rows);
    tr.u.resize(std::size_t(tr.n_steps) * tr.n_mbon);
    tr.v.resize(tr.u.size());
    tr.spikes.resize(tr.u.size());

    std::vector<double> v(tr.n_mbon, 0.0);
    for (std::uint32_t t = 0; t < tr.n_steps; ++t) {
        const auto active = kc_spikes.active(t);
        const std::size_t base = std::size_t(t) * tr.n_mbon;
        for (std::uint32_t j = 0; j < tr.n_mbon; ++j) {
            const double* w = w_kc_mbon.row(j);
            double drive = 0.0;
            for (std::uint32_t k : active) drive += w[k];
            const LifStep r = lif_step_fast(v[j], drive, beta, v_th);
            v[j] = r.v;
            tr.u[base + j] = r.u_pre;
            tr.v[base + j] = r.v;
            tr.spikes[base + j] = r.spike ? 1 : 0;
        }
    }
    return tr;
}

TrialRecording run_trial(const OdorSample& sample, const WeightSet& weights, const CircuitConfig& config,
                         const TrialProtocol& protocol, const DatasetConfig* noise) {
    protocol.validate();
    if (weights.w_kc_mbon.rows != config.n_mbon || weights.w_kc_mbon.cols != config.n_kc) {
        throw ConfigError("weight set shape does not match circuit config");
    }
    UpstreamActivity up = simulate_upstream(sample, weights, config, protocol, noise);
    TrialRecording rec;
    rec.protocol = protocol;
    rec.mbon = simulate_mbon(up.kc_spikes, weights.w_kc_mbon, config);
    rec.kc_spikes = std::move(up.kc_spikes);
    rec.counts = up.counts;
    for (std::uint8_t s : rec.mbon.spikes) rec.counts.mbon += s;
    rec.kc_coding_level = up.kc_coding_level;
    return rec;
}

std::vector<double> mean_mbon_potential(const MbonTrace& trace, const TrialProtocol& protocol) {
    const std::uint32_t t0 = protocol.eval_start(), t1 = protocol.eval_end();
    if (t1 <= t0 || t1 > trace.n_steps) throw ContractError("readout window is empty or exceeds the trace");
    std::vector<double> mean(trace.n_mbon, 0.0);
    for (std::uint32_t t = t0; t < t1; ++t) {
        for (std::uint32_t j = 0; j < trace.n_mbon; ++j) mean[j] += trace.v_at(t, j);
    }
    const double n = static_cast<double>(t1 - t0);
    for (double& m : mean) m /= n;
    return mean;
}

std::vector<double> mean_mbon_potential(const TrialRecording& rec) {
    return mean_mbon_potential(rec.mbon, rec.protocol);
}

double mean_pn_rate(const CircuitConfig& config, const WeightSet& weights, std::span<const OdorSample> batch,
                    const TrialProtocol& protocol, const DatasetConfig* noise) {
    if (batch.empty()) throw ContractError("calibration batch is empty");
    std::uint64_t spikes = 0;
    for (const OdorSample& s : batch) {
        spikes += simulate_upstream_impl(s, weights, config, protocol, noise, true).counts.pn_stimulus;
    }
    return static_cast<double>(spikes) /
           (static_cast<double>(batch.size()) * config.n_pn * protocol.stimulus_steps());
}

std::vector<double> compensation_gain_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 20; ++i) g.push_back(1.0 + 0.05 * i);
    return g;
}

std::vector<double> compensation_bias_grid() {
    std::vector<double> b;
    for (int i = 0; i <= 50; ++i) b.push_back(0.01 * i);
    return b;
}

Compensation calibrate_compensation(const CircuitConfig& config, std::span<const OdorSample> batch,
                                    const TrialProtocol& protocol, const DatasetConfig* noise, bool fit_gain) {
    Compensation out;
    out.pn_li_compensation_gain = fit_gain ? 1.0 : config.pn_li_compensation_gain;
    const WeightSet weights = build_topology(config);
    CircuitConfig base = config;
    base.enable_li = false;
    base.enable_sfa = false;
    out.baseline_rate = mean_pn_rate(base, weights, batch, protocol, noise);
    out.achieved_rate = out.baseline_rate;
    if (!config.enable_li && !config.enable_sfa) return out;

    const double target = out.baseline_rate;
    auto close_enough = [&](double rate) { return std::abs(rate - target) <= 0.05 * target; };

    // The gain is fitted with LI alone; the bias is then fitted on the full
    // configuration with that gain fixed.
    if (config.enable_li && fit_gain) {
        CircuitConfig li = config;
        li.enable_sfa = false;
        double best_rate = std::numeric_limits<double>::quiet_NaN();
        bool found = false;
        for (double g : compensation_gain_grid()) {
            li.pn_li_compensation_gain = g;
            const double rate = mean_pn_rate(li, weights, batch, protocol, noise);
            if (std::isnan(best_rate) || std::abs(rate - target) < std::abs(best_rate - target)) best_rate = rate;
            if (close_enough(rate)) {
                out.pn_li_compensation_gain = g;
                out.achieved_rate = rate;
                found = true;
                break;
            }
        }
        if (!found) {
            throw CalibrationError("no LI compensation gain in [1, 2] restores the PN rate (target " +
                                       std::to_string(target) + ", best " + std::to_string(best_rate) + ")",
                                   best_rate, target);
        }
    }

    if (config.enable_sfa) {
        CircuitConfig sfa = config;
        sfa.pn_li_compensation_gain = out.pn_li_compensation_gain;
        double best_rate = std::numeric_limits<double>::quiet_NaN();
        bool found = false;
        for (double b : compensation_bias_grid()) {
            sfa.pn_ln_sfa_bias = b;
            const double rate = mean_pn_rate(sfa, weights, batch, protocol, noise);
            if (std::isnan(best_rate) || std::abs(rate - target) < std::abs(best_rate - target)) best_rate = rate;
            if (close_enough(rate)) {
                out.pn_ln_sfa_bias = b;
                out.achieved_rate = rate;
                found = true;
                break;
            }
        }
        if (!found) {
            throw CalibrationError("no SFA bias in [0, 0.5] restores the PN rate (target " +
                                       std::to_string(target) + ", best " + std::to_string(best_rate) + ")",
                                   best_rate, target);
        }
    }
    return out;
}

void write_trial_dump(const std::filesystem::path& path, const TrialRecording& rec) {
    const std::uint32_t n_mbon = rec.mbon.n_mbon;
    std::vector<float> v(rec.mbon.v.begin(), rec.mbon.v.end());
    std::vector<float> u(rec.mbon.u.begin(), rec.mbon.u.end());
    const std::vector<std::uint8_t> kc = rec.kc_spikes.dense();
    nlohmann::json header = {{"format", kTrialDumpFormat},
                             {"version", kTrialDumpFormatVersion},
                             {"t_baseline", rec.protocol.t_baseline},
                             {"t_stim", rec.protocol.t_stim},
                             {"dt", rec.protocol.dt},
                             {"eval_start", rec.protocol.eval_start()},
                             {"eval_end", rec.protocol.eval_end()},
                             {"kc_coding_level", rec.kc_coding_level},
                             {"spike_counts",
                              {{"orn", rec.counts.orn},
                               {"pn", rec.counts.pn},
                               {"ln", rec.counts.ln},
                               {"kc", rec.counts.kc},
                               {"mbon", rec.counts.mbon}}}};
    container::write(path, std::move(header),
                     {{"mbon_v", container::DType::f32, rec.mbon.n_steps, n_mbon, container::encode_f32(v)},
                      {"mbon_u", container::DType::f32, rec.mbon.n_steps, n_mbon, container::encode_f32(u)},
                      {"mbon_spikes", container::DType::u8, rec.mbon.n_steps, n_mbon,
                       {rec.mbon.spikes.begin(), rec.mbon.spikes.end()}},
                      {"kc_spikes", container::DType::u8, rec.kc_spikes.n_steps(), rec.kc_spikes.n_cols(),
                       {kc.begin(), kc.end()}}});
}

}  // namespace flysnn

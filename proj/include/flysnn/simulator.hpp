#pragma once

// Trial simulation: baseline + stimulus through ORN -> LN -> PN -> KC -> MBON,
// one 1-ms step at a time, all layers updated in that order within a step.

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "flysnn/circuit.hpp"
#include "flysnn/odor_data.hpp"

namespace flysnn {

struct TrialProtocol {
    double t_baseline = 10.0;  // ms
    double t_stim = 30.0;      // ms
    double dt = 1.0;           // ms

    std::uint32_t baseline_steps() const;
    std::uint32_t stimulus_steps() const;
    std::uint32_t n_steps() const { return baseline_steps() + stimulus_steps(); }
    // Readout window [eval_start, eval_end) equals the stimulus window.
    std::uint32_t eval_start() const { return baseline_steps(); }
    std::uint32_t eval_end() const { return n_steps(); }
    std::uint32_t eval_steps() const { return eval_end() - eval_start(); }

    void validate() const;
};

// Binary matrix [n_steps x n_cols] stored as the sorted active columns of
// each step.
class SpikeRaster {
public:
    SpikeRaster() = default;
    SpikeRaster(std::uint32_t n_steps, std::uint32_t n_cols);

    void set_step(std::uint32_t step, std::span<const std::uint8_t> spikes);

    std::span<const std::uint32_t> active(std::uint32_t step) const {
        return {indices_.data() + offsets_[step], offsets_[step + 1] - offsets_[step]};
    }
    bool at(std::uint32_t step, std::uint32_t col) const;
    std::uint32_t n_steps() const noexcept { return n_steps_; }
    std::uint32_t n_cols() const noexcept { return n_cols_; }
    std::size_t total_spikes() const noexcept { return indices_.size(); }
    std::vector<std::uint8_t> dense() const;

    // Builds from a dense row-major 0/1 matrix.
    static SpikeRaster from_dense(std::uint32_t n_steps, std::uint32_t n_cols,
                                  std::span<const std::uint8_t> dense);

    bool operator==(const SpikeRaster&) const = default;

private:
    std::uint32_t n_steps_ = 0;
    std::uint32_t n_cols_ = 0;
    std::uint32_t filled_ = 0;
    std::vector<std::size_t> offsets_{0};
    std::vector<std::uint32_t> indices_;
};

struct LayerCounts {
    std::uint64_t orn = 0;
    std::uint64_t pn = 0;
    std::uint64_t ln = 0;
    std::uint64_t kc = 0;
    std::uint64_t mbon = 0;
    std::uint64_t pn_stimulus = 0;  // PN spikes inside the stimulus window

    bool operator==(const LayerCounts&) const = default;
};

// Everything upstream of the learnable synapses. It does not depend on
// w_kc_mbon, so a trainer can compute it once per sample and reuse it.
struct UpstreamActivity {
    SpikeRaster kc_spikes;
    LayerCounts counts;
    double kc_coding_level = 0.0;
};

// MBON state over the whole trial, rows = steps, cols = MBONs.
struct MbonTrace {
    std::uint32_t n_steps = 0;
    std::uint32_t n_mbon = 0;
    std::vector<double> u;  // pre-reset
    std::vector<double> v;  // post-reset
    std::vector<std::uint8_t> spikes;

    double u_at(std::uint32_t t, std::uint32_t j) const { return u[std::size_t(t) * n_mbon + j]; }
    double v_at(std::uint32_t t, std::uint32_t j) const { return v[std::size_t(t) * n_mbon + j]; }
};

struct TrialRecording {
    TrialProtocol protocol;
    MbonTrace mbon;  // full trial; the readout window is protocol.eval_*()
    SpikeRaster kc_spikes;
    LayerCounts counts;
    double kc_coding_level = 0.0;

    // Post-reset MBON potential at eval-window row r.
    double mbon_v(std::uint32_t r, std::uint32_t j) const {
        return mbon.v_at(protocol.eval_start() + r, j);
    }
    double mbon_u(std::uint32_t r, std::uint32_t j) const {
        return mbon.u_at(protocol.eval_start() + r, j);
    }
};

// Noise context for OU samples; pass nullptr for static (Gaussian) samples.
UpstreamActivity simulate_upstream(const OdorSample& sample, const WeightSet& weights,
                                   const CircuitConfig& config, const TrialProtocol& protocol,
                                   const DatasetConfig* noise = nullptr);

MbonTrace simulate_mbon(const SpikeRaster& kc_spikes, const Matrix& w_kc_mbon,
                        const CircuitConfig& config);

TrialRecording run_trial(const OdorSample& sample, const WeightSet& weights,
                         const CircuitConfig& config, const TrialProtocol& protocol,
                         const DatasetConfig* noise = nullptr);

// Time average of the post-reset MBON potential over the readout window.
std::vector<double> mean_mbon_potential(const TrialRecording& rec);
std::vector<double> mean_mbon_potential(const MbonTrace& trace, const TrialProtocol& protocol);

// PN spikes per neuron per stimulus step, averaged over the batch.
double mean_pn_rate(const CircuitConfig& config, const WeightSet& weights,
                    std::span<const OdorSample> batch, const TrialProtocol& protocol,
                    const DatasetConfig* noise = nullptr);

struct Compensation {
    double pn_li_compensation_gain = 1.0;
    double pn_ln_sfa_bias = 0.0;
    double baseline_rate = 0.0;
    double achieved_rate = 0.0;
};

std::vector<double> compensation_gain_grid();  // 1.00, 1.05, ..., 2.00
std::vector<double> compensation_bias_grid();  // 0.00, 0.01, ..., 0.50

// Smallest grid gain (then bias) whose mean PN rate on the batch lies within
// 5% of the mechanism-free rate. Throws CalibrationError when no grid point
// qualifies. With fit_gain = false the config's own LI gain is kept and only
// the bias is searched.
Compensation calibrate_compensation(const CircuitConfig& config, std::span<const OdorSample> batch,
                                    const TrialProtocol& protocol,
                                    const DatasetConfig* noise = nullptr, bool fit_gain = true);

inline constexpr int kTrialDumpFormatVersion = 1;
inline constexpr const char* kTrialDumpFormat = "flysnn-trial";

void write_trial_dump(const std::filesystem::path& path, const TrialRecording& rec);

}  // namespace flysnn

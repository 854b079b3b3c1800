#pragma once

// Network sizes, fixed connectivity, initial readout weights and mechanism
// switches for the ORN -> {PN, LN} -> KC -> MBON circuit.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace flysnn {

enum class Preset : std::uint8_t { low = 1, medium = 2, high = 3 };

std::string to_string(Preset p);
Preset parse_preset(const std::string& s);
inline double multiplier(Preset p) { return static_cast<double>(p); }

enum class Variant { baseline, li, sfa, full };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct CircuitConfig {
    std::uint32_t n_orn = 50;
    std::uint32_t n_pn = 50;
    std::uint32_t n_ln = 20;
    std::uint32_t n_kc = 2000;
    std::uint32_t n_mbon = 100;
    std::uint32_t kc_fan_in = 6;
    double w_pn_kc = 0.3;
    double kc_mbon_init_max = 0.08;
    double w_orn_pn = 1.0;  // one-to-one ORN->PN gain
    double w_orn_ln = -1.0;  // per-synapse ORN->LN weight; negative selects 1/n_orn

    bool enable_li = false;
    bool enable_sfa = false;
    Preset li_preset = Preset::medium;
    Preset sfa_preset = Preset::medium;
    double w0_li = 0.1;
    double w0_sfa = 0.05;

    double orn_gain = 1.0;
    double pn_li_compensation_gain = 1.0;
    double pn_ln_sfa_bias = 0.0;

    double tau_m = 10.0;
    double v_th = 0.8;
    double v_th_mbon = 1.2;
    double tau_sfa = 50.0;
    double tau_trace = 5.0;
    double dt = 1.0;

    std::uint64_t seed = 1;

    // Total LN->PN inhibition magnitude (preset multiplier times base).
    double li_magnitude() const { return multiplier(li_preset) * w0_li; }
    // Signed SFA weight applied to PNs, LNs and KCs; 0 when SFA is disabled.
    double w_sfa() const { return enable_sfa ? -multiplier(sfa_preset) * w0_sfa : 0.0; }
    // Bias is only meaningful while SFA is on.
    double bias() const { return enable_sfa ? pn_ln_sfa_bias : 0.0; }
    double pn_drive_gain() const { return enable_li ? pn_li_compensation_gain : 1.0; }

    void validate() const;  // throws ConfigError
};

CircuitConfig with_variant(CircuitConfig config, Variant v);

nlohmann::json to_json(const CircuitConfig& c);
CircuitConfig circuit_config_from_json(const nlohmann::json& j);

// Row-major dense matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }
    double* row(std::size_t r) { return data.data() + r * cols; }

    bool operator==(const Matrix&) const = default;
};

struct WeightSet {
    double w_orn_pn = 1.0;
    Matrix w_orn_ln;                      // [n_ln x n_orn], >= 0
    Matrix w_ln_pn;                       // [n_pn x n_ln], <= 0
    std::uint32_t kc_fan_in = 0;
    std::vector<std::uint32_t> kc_inputs;  // [n_kc x kc_fan_in] PN indices
    double w_pn_kc = 0.0;
    Matrix w_kc_mbon;                     // [n_mbon x n_kc], learnable

    std::span<const std::uint32_t> inputs_of_kc(std::size_t kc) const {
        return {kc_inputs.data() + kc * kc_fan_in, kc_fan_in};
    }

    bool operator==(const WeightSet&) const = default;
};

WeightSet build_topology(const CircuitConfig& config);

struct Violation {
    std::string location;
    std::string message;
};

// Every violated structural invariant, with its location; empty when valid.
std::vector<Violation> validate(const WeightSet& weights, const CircuitConfig& config);

// Hash of every field that influences simulation results.
std::uint64_t config_hash(const nlohmann::json& canonical);
std::string hash_hex(std::uint64_t h);

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr const char* kCheckpointFormat = "flysnn-checkpoint";

struct Checkpoint {
    CircuitConfig config;
    std::string config_hash;
    Matrix w_kc_mbon;  // float32 precision on disk
};

// Fixed weights are regenerated from the config seed; only the readout is stored.
void write_checkpoint(const std::filesystem::path& path, const CircuitConfig& config,
                      const WeightSet& weights);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace flysnn

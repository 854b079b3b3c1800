#pragma once

// Experiment plumbing shared by the command-line tool and the acceptance
// suite: scale profiles, single runs with automatic compensation, resumable
// sweep grids stored as CSV, and the ordering report computed from them.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "flysnn/circuit.hpp"
#include "flysnn/odor_data.hpp"
#include "flysnn/simulator.hpp"
#include "flysnn/trainer.hpp"
#include "json.hpp"

namespace flysnn {

enum class Profile { desk, paper };

std::string to_string(Profile p);
Profile parse_profile(const std::string& s);

// Everything needed to reproduce one training run.
struct RunSettings {
    Profile profile = Profile::desk;
    Variant variant = Variant::baseline;
    DatasetConfig data;
    CircuitConfig circuit;  // enable_li / enable_sfa are derived from `variant`
    TrainConfig train;
    // Explicit compensation values; calibrated on the training split when unset.
    std::optional<double> li_compensation_gain;
    std::optional<double> sfa_bias;
    std::uint32_t calibration_samples = 100;

    // One seed drives data, topology and training.
    void set_seed(std::uint64_t seed);
};

// Defaults of a scale profile (desk: small, runs on one machine in minutes).
RunSettings profile_defaults(Profile p);

// Validates every config and the profile's size caps. Throws ConfigError.
void validate(const RunSettings& s);

// Result-relevant description of a run before calibration; hashed to
// identify sweep cells.
nlohmann::json identity_json(const RunSettings& s);
std::string identity_hash(const RunSettings& s);

struct ResolvedCircuit {
    CircuitConfig circuit;
    Compensation compensation;
};

// Applies the variant and the dataset shape to the circuit and fills in the
// compensation (explicit values win over calibration).
ResolvedCircuit resolve_circuit(const RunSettings& s, const Dataset& dataset);

struct RunOutcome {
    ResolvedCircuit resolved;
    TrainResult result;
};

RunOutcome run_training(const RunSettings& s, const Dataset& dataset, const EpochCallback& on_epoch = {});

// Report document written by `train`; contains no timing information.
nlohmann::json run_report_json(const RunSettings& s, const RunOutcome& outcome);

// ---- sweeps ---------------------------------------------------------------

struct SweepSpec {
    RunSettings base;
    std::vector<Variant> variants;
    std::vector<double> noise_intensities;
    std::vector<std::uint32_t> class_counts;
    std::vector<Preset> presets;  // applied to both mechanisms
    std::vector<std::uint64_t> seeds;

    void validate() const;
};

struct SweepCell {
    RunSettings settings;
    Preset preset = Preset::medium;
};

// Grid order: variant, noise, classes, preset, seed (last varies fastest).
std::vector<SweepCell> expand(const SweepSpec& spec);

struct SweepRow {
    std::string variant;
    std::string noise_kind;
    double noise_intensity = 0.0;
    std::uint32_t n_classes = 0;
    std::string preset;
    std::uint64_t seed = 0;
    double test_acc = 0.0;
    std::optional<std::uint32_t> convergence_epoch;
    double acc_gain_per_epoch = 0.0;
    double kc_coding_level = 0.0;
    double wall_s = 0.0;
    std::string status = "ok";
    std::string config_hash;

    bool ok() const { return status == "ok"; }
};

inline constexpr const char* kSweepCsvVersionLine = "# flysnn-sweep v1";
inline constexpr const char* kSweepCsvHeader =
    "variant,noise_kind,noise_intensity,n_classes,preset,seed,test_acc,convergence_epoch,acc_gain_per_epoch,"
    "kc_coding_level,wall_s,status,config_hash";

std::string format_row(const SweepRow& row);
// Throws FormatError naming the 1-based line on malformed input. With
// allow_partial_tail, an unterminated last line (interrupted write) is dropped.
std::vector<SweepRow> read_sweep_csv(std::istream& in, bool allow_partial_tail = false);
std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path, bool allow_partial_tail = false);
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

// Trains one cell; failures are captured in the row status.
SweepRow run_cell(const SweepCell& cell, unsigned workers);

struct SweepProgress {
    std::size_t total = 0;
    std::size_t skipped = 0;
    std::size_t computed = 0;
};

using CellCallback = std::function<void(const SweepRow&)>;

// Runs every cell whose hash has no successful row in `csv` yet, appending
// rows as cells finish, then rewrites the file in grid order.
SweepProgress run_sweep(const SweepSpec& spec, const std::filesystem::path& csv, unsigned workers,
                        const CellCallback& on_cell = {});

// ---- report ---------------------------------------------------------------

struct VariantMean {
    std::string variant;
    std::size_t n = 0;
    double mean_acc = 0.0;
    std::optional<double> delta_vs_baseline;
};

struct ReportGroup {
    std::string noise_kind;
    double noise_intensity = 0.0;
    std::uint32_t n_classes = 0;
    std::string preset;
    std::vector<VariantMean> variants;  // fixed order: baseline, li, sfa, full
    std::string best_variant;
};

struct ConvergenceSummary {
    std::string variant;
    std::size_t runs = 0;
    std::size_t converged = 0;
    std::optional<double> mean_epoch;  // over converged runs
    double mean_gain_per_epoch = 0.0;
};

struct SweepReport {
    std::vector<ReportGroup> groups;
    std::vector<ConvergenceSummary> convergence;
    std::size_t failed_rows = 0;
};

SweepReport summarize(const std::vector<SweepRow>& rows);
nlohmann::json to_json(const SweepReport& r);
std::string render(const SweepReport& r);

}  // namespace flysnn

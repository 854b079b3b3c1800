#pragma once

// Synthetic odor classification datasets: one uniform prototype per class,
// samples perturbed by static Gaussian noise or by a per-timestep
// Ornstein-Uhlenbeck process, clipped to be non-negative.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flysnn/container.hpp"
#include "json.hpp"

namespace flysnn {

enum class NoiseKind { gaussian, ou };

std::string to_string(NoiseKind kind);
NoiseKind parse_noise_kind(const std::string& s);

struct DatasetConfig {
    std::uint32_t n_classes = 100;
    std::uint32_t n_orn = 50;
    NoiseKind noise_kind = NoiseKind::gaussian;
    double noise_intensity = 0.0;  // sigma (Gaussian) or stationary std (OU)
    double ou_theta = 0.1;         // mean-reversion rate per ms
    double ou_dt = 1.0;            // OU discretization step, ms
    std::uint32_t n_train = 3000;
    std::uint32_t n_test = 1000;
    std::uint64_t seed = 1;

    void validate() const;  // throws ConfigError
};

nlohmann::json to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

struct OdorPrototype {
    std::uint32_t class_id = 0;
    std::vector<float> intensities;
};

using NoiseKey = std::array<std::uint32_t, 4>;

struct OdorSample {
    std::uint32_t class_id = 0;
    std::uint32_t sample_index = 0;  // global index: train rows first, then test
    std::vector<float> intensities;
    std::optional<NoiseKey> noise_stream_key;  // OU samples only
};

struct Dataset {
    DatasetConfig config;
    std::vector<OdorPrototype> prototypes;
    std::vector<OdorSample> train;
    std::vector<OdorSample> test;
};

struct DatasetManifest {
    DatasetConfig config;
    int version = 0;
    std::uint64_t n_train = 0;
    std::uint64_t n_test = 0;
    std::uint64_t manifest_bytes = 0;
    std::uint64_t payload_bytes = 0;
    std::vector<container::BlockInfo> blocks;
};

inline constexpr int kDatasetFormatVersion = 1;
inline constexpr const char* kDatasetFormat = "flysnn-dataset";

std::vector<OdorPrototype> make_prototypes(const DatasetConfig& config);

// Class of the sample with this global index (balanced round-robin).
std::uint32_t class_of_sample(std::uint32_t sample_index, const DatasetConfig& config);

OdorSample sample_gaussian(const OdorPrototype& prototype, std::uint32_t sample_index,
                           const DatasetConfig& config);

// OU sample: the stored intensities are the prototype itself; the noise is
// realized per timestep from the stream key.
OdorSample sample_ou(const OdorPrototype& prototype, std::uint32_t sample_index,
                     const DatasetConfig& config);

OdorSample make_sample(const OdorPrototype& prototype, std::uint32_t sample_index,
                       const DatasetConfig& config);

// Pure function of config; identical output for any worker count.
Dataset generate_dataset(const DatasetConfig& config, unsigned workers = 1);

// Walks the OU recursion of one sample step by step.
class OuNoiseStream {
public:
    OuNoiseStream(const OdorSample& sample, const DatasetConfig& config);

    // Y at the current step; the first call returns Y(0).
    const std::vector<double>& next();

    std::uint32_t steps_taken() const noexcept { return step_; }

private:
    NoiseKey key_;
    double decay_;
    double innovation_scale_;
    double stationary_std_;
    std::uint32_t step_ = 0;
    std::vector<double> y_;
};

// Y(step) of the sample's OU stream; step is counted from stimulus onset.
std::vector<double> realize_ou_noise(const OdorSample& sample, std::uint32_t step,
                                     const DatasetConfig& config,
                                     std::uint32_t stimulus_steps = 30);

DatasetManifest write_dataset(const std::filesystem::path& path, const Dataset& dataset);

struct LoadedDataset {
    DatasetManifest manifest;
    Dataset dataset;
};

LoadedDataset read_dataset(const std::filesystem::path& path);

}  // namespace flysnn

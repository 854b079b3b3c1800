#include "flysnn/odor_data.hpp"

#include <algorithm>
#include <cmath>

#include "flysnn/errors.hpp"
#include "flysnn/parallel.hpp"
#include "flysnn/rng.hpp"

namespace flysnn {

std::string to_string(NoiseKind kind) { return kind == NoiseKind::gaussian ? "gaussian" : "ou"; }

NoiseKind parse_noise_kind(const std::string& s) {
    if (s == "gaussian") return NoiseKind::gaussian;
    if (s == "ou") return NoiseKind::ou;
    throw ConfigError("unknown noise kind '" + s + "' (expected gaussian or ou)");
}

void DatasetConfig::validate() const {
    if (n_classes < 2) throw ConfigError("n_classes must be at least 2");
    if (n_orn < 1) throw ConfigError("n_orn must be at least 1");
    if (!(noise_intensity >= 0.0) || !std::isfinite(noise_intensity)) {
        throw ConfigError("noise_intensity must be a finite non-negative number");
    }
    if (n_train < 1) throw ConfigError("n_train must be at least 1");
    if (n_test < 1) throw ConfigError("n_test must be at least 1");
    if (noise_kind == NoiseKind::ou) {
        if (!(ou_dt > 0.0)) throw ConfigError("ou_dt must be positive");
        if (!(ou_theta >= 0.0) || ou_theta * ou_dt >= 2.0) {
            throw ConfigError("ou_theta must satisfy 0 <= theta*dt < 2");
        }
    }
}

nlohmann::json to_json(const DatasetConfig& c) {
    return {{"n_classes", c.n_classes},       {"n_orn", c.n_orn},
            {"noise_kind", to_string(c.noise_kind)}, {"noise_intensity", c.noise_intensity},
            {"ou_theta", c.ou_theta},         {"ou_dt", c.ou_dt},
            {"n_train", c.n_train},           {"n_test", c.n_test},
            {"seed", c.seed}};
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
    DatasetConfig c;
    c.n_classes = j.at("n_classes").get<std::uint32_t>();
    c.n_orn = j.at("n_orn").get<std::uint32_t>();
    c.noise_kind = parse_noise_kind(j.at("noise_kind").get<std::string>());
    c.noise_intensity = j.at("noise_intensity").get<double>();
    c.ou_theta = j.at("ou_theta").get<double>();
    c.ou_dt = j.at("ou_dt").get<double>();
    c.n_train = j.at("n_train").get<std::uint32_t>();
    c.n_test = j.at("n_test").get<std::uint32_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

std::vector<OdorPrototype> make_prototypes(const DatasetConfig& config) {
    config.validate();
    const rng::Key key = rng::key_from_seed(config.seed);
    std::vector<OdorPrototype> out(config.n_classes);
    for (std::uint32_t c = 0; c < config.n_classes; ++c) {
        out[c].class_id = c;
        out[c].intensities.resize(config.n_orn);
        for (std::uint32_t j = 0; j < config.n_orn; ++j) {
            const double u = rng::uniform(
                {c, j, 0, static_cast<std::uint32_t>(rng::Domain::prototype)}, key);
            // Rounding to float may land on 1.0f, which is still inside [0,1].
            out[c].intensities[j] = static_cast<float>(u);
        }
    }
    return out;
}

std::uint32_t class_of_sample(std::uint32_t sample_index, const DatasetConfig& config) {
    return sample_index % config.n_classes;
}

OdorSample sample_gaussian(const OdorPrototype& prototype, std::uint32_t sample_index,
                           const DatasetConfig& config) {
    if (prototype.intensities.size() != config.n_orn) {
        throw ConfigError("prototype length does not match n_orn");
    }
    const rng::Key key = rng::key_from_seed(config.seed);
    OdorSample s;
    s.class_id = prototype.class_id;
    s.sample_index = sample_index;
    s.intensities.resize(config.n_orn);
    for (std::uint32_t j = 0; j < config.n_orn; ++j) {
        const double z = rng::standard_normal(
            {sample_index, j, prototype.class_id,
             static_cast<std::uint32_t>(rng::Domain::gaussian_noise)},
            key);
        const double x = static_cast<double>(prototype.intensities[j]) + config.noise_intensity * z;
        s.intensities[j] = static_cast<float>(std::max(0.0, x));
    }
    return s;
}

OdorSample sample_ou(const OdorPrototype& prototype, std::uint32_t sample_index,
                     const DatasetConfig& config) {
    if (prototype.intensities.size() != config.n_orn) {
        throw ConfigError("prototype length does not match n_orn");
    }
    OdorSample s;
    s.class_id = prototype.class_id;
    s.sample_index = sample_index;
    s.intensities = prototype.intensities;
    s.noise_stream_key = rng::philox4x32(
        {prototype.class_id, sample_index, 0, static_cast<std::uint32_t>(rng::Domain::ou_key)},
        rng::key_from_seed(config.seed));
    return s;
}

OdorSample make_sample(const OdorPrototype& prototype, std::uint32_t sample_index,
                       const DatasetConfig& config) {
    return config.noise_kind == NoiseKind::gaussian
               ? sample_gaussian(prototype, sample_index, config)
               : sample_ou(prototype, sample_index, config);
}

Dataset generate_dataset(const DatasetConfig& config, unsigned workers) {
    config.validate();
    Dataset d;
    d.config = config;
    d.prototypes = make_prototypes(config);
    d.train.resize(config.n_train);
    d.test.resize(config.n_test);
    const std::size_t total = static_cast<std::size_t>(config.n_train) + config.n_test;
    parallel_for(total, workers, [&](std::size_t i) {
        const auto index = static_cast<std::uint32_t>(i);
        OdorSample s = make_sample(d.prototypes[class_of_sample(index, config)], index, config);
        if (i < config.n_train) {
            d.train[i] = std::move(s);
        } else {
            d.test[i - config.n_train] = std::move(s);
        }
    });
    return d;
}

OuNoiseStream::OuNoiseStream(const OdorSample& sample, const DatasetConfig& config)
    : key_(sample.noise_stream_key.value_or(NoiseKey{})),
      decay_(1.0 - config.ou_theta * config.ou_dt),
      stationary_std_(config.noise_intensity),
      y_(config.n_orn, 0.0) {
    if (!sample.noise_stream_key) throw ConfigError("sample carries no OU noise stream key");
    // Discrete AR(1) stationary variance is step_var / (1 - decay^2); pick the
    // innovation so that it equals noise_intensity^2 exactly.
    innovation_scale_ = stationary_std_ * std::sqrt(std::max(0.0, 1.0 - decay_ * decay_));
}

const std::vector<double>& OuNoiseStream::next() {
    const rng::Key k{key_[2], key_[3]};
    for (std::uint32_t c = 0; c < y_.size(); ++c) {
        const double eta = rng::standard_normal({step_, c, key_[0], key_[1]}, k);
        y_[c] = step_ == 0 ? stationary_std_ * eta : decay_ * y_[c] + innovation_scale_ * eta;
    }
    ++step_;
    return y_;
}

std::vector<double> realize_ou_noise(const OdorSample& sample, std::uint32_t step,
                                     const DatasetConfig& config,
                                     std::uint32_t stimulus_steps) {
    if (config.noise_kind != NoiseKind::ou) throw ConfigError("dataset noise kind is not ou");
    if (step >= stimulus_steps) {
        throw RangeError("timestep " + std::to_string(step) + " outside stimulus window of " +
                         std::to_string(stimulus_steps) + " steps");
    }
    OuNoiseStream stream(sample, config);
    for (std::uint32_t t = 0; t < step; ++t) stream.next();
    return stream.next();
}

namespace {

container::Block matrix_block(const std::string& name, const std::vector<OdorSample>& rows,
                              std::uint32_t cols) {
    std::vector<float> flat;
    flat.reserve(rows.size() * cols);
    for (const auto& s : rows) flat.insert(flat.end(), s.intensities.begin(), s.intensities.end());
    return {name, container::DType::f32, rows.size(), cols, container::encode_f32(flat)};
}

container::Block label_block(const std::string& name, const std::vector<OdorSample>& rows) {
    std::vector<std::uint32_t> labels;
    labels.reserve(rows.size());
    for (const auto& s : rows) labels.push_back(s.class_id);
    return {name, container::DType::u32, rows.size(), 1, container::encode_u32(labels)};
}

DatasetManifest manifest_from(const nlohmann::json& m, std::uint64_t manifest_bytes) {
    DatasetManifest out;
    out.config = dataset_config_from_json(m.at("config"));
    out.version = m.at("version").get<int>();
    out.n_train = m.at("n_train").get<std::uint64_t>();
    out.n_test = m.at("n_test").get<std::uint64_t>();
    out.payload_bytes = m.at("payload_bytes").get<std::uint64_t>();
    out.manifest_bytes = manifest_bytes;
    for (const auto& b : m.at("blocks")) {
        container::BlockInfo info;
        info.name = b.at("name").get<std::string>();
        info.rows = b.at("rows").get<std::uint64_t>();
        info.cols = b.at("cols").get<std::uint64_t>();
        info.offset = b.at("offset").get<std::uint64_t>();
        info.length = b.at("length").get<std::uint64_t>();
        out.blocks.push_back(info);
    }
    return out;
}

std::vector<OdorSample> rebuild_split(const std::vector<float>& x,
                                      const std::vector<std::uint32_t>& y,
                                      std::uint32_t first_index, const Dataset& d) {
    const std::uint32_t n_orn = d.config.n_orn;
    std::vector<OdorSample> out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] >= d.config.n_classes) throw FormatError("label out of range");
        OdorSample& s = out[i];
        s.class_id = y[i];
        s.sample_index = first_index + static_cast<std::uint32_t>(i);
        s.intensities.assign(x.begin() + static_cast<std::ptrdiff_t>(i * n_orn),
                             x.begin() + static_cast<std::ptrdiff_t>((i + 1) * n_orn));
        if (d.config.noise_kind == NoiseKind::ou) {
            // The key is a pure function of (seed, class, sample index), so it is
            // rebuilt rather than stored.
            s.noise_stream_key = sample_ou(d.prototypes.at(s.class_id), s.sample_index, d.config)
                                     .noise_stream_key;
        }
    }
    return out;
}

}  // namespace

DatasetManifest write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
    const DatasetConfig& cfg = dataset.config;
    if (dataset.train.empty()) throw FormatError("refusing to write a dataset with an empty train split");
    if (dataset.test.empty()) throw FormatError("refusing to write a dataset with an empty test split");
    if (dataset.prototypes.size() != cfg.n_classes) {
        throw FormatError("prototype count does not match n_classes");
    }
    for (const auto* split : {&dataset.train, &dataset.test}) {
        for (const auto& s : *split) {
            if (s.intensities.size() != cfg.n_orn) throw FormatError("sample length does not match n_orn");
        }
    }

    std::vector<float> protos;
    for (const auto& p : dataset.prototypes) {
        protos.insert(protos.end(), p.intensities.begin(), p.intensities.end());
    }

    nlohmann::json header = {{"format", kDatasetFormat},
                             {"version", kDatasetFormatVersion},
                             {"config", to_json(cfg)},
                             {"n_train", dataset.train.size()},
                             {"n_test", dataset.test.size()}};
    const std::vector<container::Block> blocks = {
        {"prototypes", container::DType::f32, dataset.prototypes.size(), cfg.n_orn,
         container::encode_f32(protos)},
        matrix_block("train_x", dataset.train, cfg.n_orn),
        label_block("train_y", dataset.train),
        matrix_block("test_x", dataset.test, cfg.n_orn),
        label_block("test_y", dataset.test),
    };
    const nlohmann::json written = container::write(path, std::move(header), blocks);
    return manifest_from(written, container::manifest_line_length(path));
}

LoadedDataset read_dataset(const std::filesystem::path& path) {
    container::Contents c = container::read(path, kDatasetFormat, kDatasetFormatVersion);
    LoadedDataset out;
    try {
        out.manifest = manifest_from(c.manifest, container::manifest_line_length(path));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed dataset manifest: ") + e.what());
    }
    Dataset& d = out.dataset;
    d.config = out.manifest.config;
    d.config.validate();

    auto need = [&](const char* name) -> const container::Block& {
        auto it = c.blocks.find(name);
        if (it == c.blocks.end()) throw FormatError(std::string("dataset block missing: ") + name);
        return it->second;
    };
    const auto& proto_block = need("prototypes");
    if (proto_block.rows != d.config.n_classes || proto_block.cols != d.config.n_orn) {
        throw FormatError("prototype block shape does not match config");
    }
    const std::vector<float> protos = container::decode_f32(proto_block);
    d.prototypes.resize(d.config.n_classes);
    for (std::uint32_t k = 0; k < d.config.n_classes; ++k) {
        d.prototypes[k].class_id = k;
        d.prototypes[k].intensities.assign(protos.begin() + static_cast<std::ptrdiff_t>(k * d.config.n_orn),
                                           protos.begin() + static_cast<std::ptrdiff_t>((k + 1) * d.config.n_orn));
    }

    auto load_split = [&](const char* xname, const char* yname, std::uint64_t expected,
                          std::uint32_t first_index) {
        const auto& xb = need(xname);
        const auto& yb = need(yname);
        if (xb.rows != expected || yb.rows != expected || xb.cols != d.config.n_orn) {
            throw FormatError(std::string("block shape mismatch for ") + xname);
        }
        return rebuild_split(container::decode_f32(xb), container::decode_u32(yb), first_index, d);
    };
    d.train = load_split("train_x", "train_y", out.manifest.n_train, 0);
    d.test = load_split("test_x", "test_y", out.manifest.n_test,
                        static_cast<std::uint32_t>(out.manifest.n_train));
    return out;
}

}  // namespace flysnn

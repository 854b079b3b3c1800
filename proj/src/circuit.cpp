#include "flysnn/circuit.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "flysnn/container.hpp"
#include "flysnn/errors.hpp"
#include "flysnn/rng.hpp"

namespace flysnn {

std::string to_string(Preset p) {
    switch (p) {
        case Preset::low:
            return "low";
        case Preset::medium:
            return "medium";
        case Preset::high:
            return "high";
    }
    return "?";
}

Preset parse_preset(const std::string& s) {
    if (s == "low") return Preset::low;
    if (s == "medium") return Preset::medium;
    if (s == "high") return Preset::high;
    throw ConfigError("unknown strength preset '" + s + "' (expected low, medium or high)");
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::baseline:
            return "baseline";
        case Variant::li:
            return "li";
        case Variant::sfa:
            return "sfa";
        case Variant::full:
            return "full";
    }
    return "?";
}

Variant parse_variant(const std::string& s) {
    if (s == "baseline") return Variant::baseline;
    if (s == "li") return Variant::li;
    if (s == "sfa") return Variant::sfa;
    if (s == "full") return Variant::full;
    throw ConfigError("unknown model variant '" + s + "' (expected baseline, li, sfa or full)");
}

void CircuitConfig::validate() const {
    if (n_orn < 1 || n_pn < 1 || n_ln < 1 || n_kc < 1 || n_mbon < 1 || kc_fan_in < 1) {
        throw ConfigError("all layer sizes and kc_fan_in must be at least 1");
    }
    if (n_orn != n_pn) throw ConfigError("ORN->PN is one-to-one, so n_orn must equal n_pn");
    if (kc_fan_in > n_pn) {
        throw ConfigError("kc_fan_in (" + std::to_string(kc_fan_in) + ") exceeds n_pn (" +
                          std::to_string(n_pn) + ")");
    }
    if (!(w0_li >= 0.0) || !(w0_sfa >= 0.0)) throw ConfigError("w0_li and w0_sfa must be >= 0");
    if (!(kc_mbon_init_max >= 0.0)) throw ConfigError("kc_mbon_init_max must be >= 0");
    if (!(tau_m > 0.0) || !(tau_sfa > 0.0) || !(tau_trace > 0.0) || !(dt > 0.0)) {
        throw ConfigError("time constants and dt must be positive");
    }
    if (!(v_th > 0.0) || !(v_th_mbon > 0.0)) throw ConfigError("thresholds must be positive");
    if (!(pn_li_compensation_gain > 0.0)) throw ConfigError("compensation gain must be positive");
    for (double x : {w_pn_kc, w_orn_pn, w_orn_ln, orn_gain, pn_ln_sfa_bias}) {
        if (!std::isfinite(x)) throw ConfigError("circuit weights must be finite");
    }
}

CircuitConfig with_variant(CircuitConfig config, Variant v) {
    config.enable_li = v == Variant::li || v == Variant::full;
    config.enable_sfa = v == Variant::sfa || v == Variant::full;
    return config;
}

nlohmann::json to_json(const CircuitConfig& c) {
    return {{"n_orn", c.n_orn},
            {"n_pn", c.n_pn},
            {"n_ln", c.n_ln},
            {"n_kc", c.n_kc},
            {"n_mbon", c.n_mbon},
            {"kc_fan_in", c.kc_fan_in},
            {"w_pn_kc", c.w_pn_kc},
            {"kc_mbon_init_max", c.kc_mbon_init_max},
            {"w_orn_pn", c.w_orn_pn},
            {"w_orn_ln", c.w_orn_ln},
            {"enable_li", c.enable_li},
            {"enable_sfa", c.enable_sfa},
            {"li_preset", to_string(c.li_preset)},
            {"sfa_preset", to_string(c.sfa_preset)},
            {"w0_li", c.w0_li},
            {"w0_sfa", c.w0_sfa},
            {"orn_gain", c.orn_gain},
            {"pn_li_compensation_gain", c.pn_li_compensation_gain},
            {"pn_ln_sfa_bias", c.pn_ln_sfa_bias},
            {"tau_m", c.tau_m},
            {"v_th", c.v_th},
            {"v_th_mbon", c.v_th_mbon},
            {"tau_sfa", c.tau_sfa},
            {"tau_trace", c.tau_trace},
            {"dt", c.dt},
            {"seed", c.seed}};
}

CircuitConfig circuit_config_from_json(const nlohmann::json& j) {
    CircuitConfig c;
    c.n_orn = j.at("n_orn").get<std::uint32_t>();
    c.n_pn = j.at("n_pn").get<std::uint32_t>();
    c.n_ln = j.at("n_ln").get<std::uint32_t>();
    c.n_kc = j.at("n_kc").get<std::uint32_t>();
    c.n_mbon = j.at("n_mbon").get<std::uint32_t>();
    c.kc_fan_in = j.at("kc_fan_in").get<std::uint32_t>();
    c.w_pn_kc = j.at("w_pn_kc").get<double>();
    c.kc_mbon_init_max = j.at("kc_mbon_init_max").get<double>();
    c.w_orn_pn = j.at("w_orn_pn").get<double>();
    c.w_orn_ln = j.at("w_orn_ln").get<double>();
    c.enable_li = j.at("enable_li").get<bool>();
    c.enable_sfa = j.at("enable_sfa").get<bool>();
    c.li_preset = parse_preset(j.at("li_preset").get<std::string>());
    c.sfa_preset = parse_preset(j.at("sfa_preset").get<std::string>());
    c.w0_li = j.at("w0_li").get<double>();
    c.w0_sfa = j.at("w0_sfa").get<double>();
    c.orn_gain = j.at("orn_gain").get<double>();
    c.pn_li_compensation_gain = j.at("pn_li_compensation_gain").get<double>();
    c.pn_ln_sfa_bias = j.at("pn_ln_sfa_bias").get<double>();
    c.tau_m = j.at("tau_m").get<double>();
    c.v_th = j.at("v_th").get<double>();
    c.v_th_mbon = j.at("v_th_mbon").get<double>();
    c.tau_sfa = j.at("tau_sfa").get<double>();
    c.tau_trace = j.at("tau_trace").get<double>();
    c.dt = j.at("dt").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

WeightSet build_topology(const CircuitConfig& config) {
    config.validate();
    const rng::Key key = rng::key_from_seed(config.seed);
    WeightSet w;
    w.w_orn_pn = config.w_orn_pn;

    const double orn_ln = config.w_orn_ln < 0.0 ? 1.0 / config.n_orn : config.w_orn_ln;
    w.w_orn_ln = Matrix(config.n_ln, config.n_orn, orn_ln);
    // Normalized by pool size so total inhibition does not depend on n_ln.
    w.w_ln_pn = Matrix(config.n_pn, config.n_ln, -config.li_magnitude() / config.n_ln);

    w.kc_fan_in = config.kc_fan_in;
    w.w_pn_kc = config.w_pn_kc;
    w.kc_inputs.resize(static_cast<std::size_t>(config.n_kc) * config.kc_fan_in);
    std::vector<std::uint32_t> pool(config.n_pn);
    for (std::uint32_t i = 0; i < config.n_kc; ++i) {
        std::iota(pool.begin(), pool.end(), 0u);
        rng::CounterStream stream(key, i, 0, rng::Domain::kc_fan_in);
        // Partial Fisher-Yates: the first kc_fan_in slots are a uniform
        // sample without replacement.
        for (std::uint32_t d = 0; d < config.kc_fan_in; ++d) {
            const std::uint32_t pick = d + stream.below(config.n_pn - d);
            std::swap(pool[d], pool[pick]);
            w.kc_inputs[static_cast<std::size_t>(i) * config.kc_fan_in + d] = pool[d];
        }
    }

    w.w_kc_mbon = Matrix(config.n_mbon, config.n_kc);
    for (std::uint32_t j = 0; j < config.n_mbon; ++j) {
        for (std::uint32_t k = 0; k < config.n_kc; ++k) {
            w.w_kc_mbon(j, k) =
                config.kc_mbon_init_max *
                rng::uniform({j, k, 0, static_cast<std::uint32_t>(rng::Domain::kc_mbon_init)}, key);
        }
    }
    return w;
}

std::vector<Violation> validate(const WeightSet& weights, const CircuitConfig& config) {
    std::vector<Violation> out;
    auto add = [&](std::string loc, std::string msg) { out.push_back({std::move(loc), std::move(msg)}); };
    auto idx = [](const char* name, std::size_t r, std::size_t c) {
        return std::string(name) + "[" + std::to_string(r) + "," + std::to_string(c) + "]";
    };

    if (weights.w_orn_ln.rows != config.n_ln || weights.w_orn_ln.cols != config.n_orn) {
        add("w_orn_ln", "shape is not [n_ln x n_orn]");
    } else {
        for (std::size_t r = 0; r < weights.w_orn_ln.rows; ++r)
            for (std::size_t c = 0; c < weights.w_orn_ln.cols; ++c)
                if (!(weights.w_orn_ln(r, c) >= 0.0)) add(idx("w_orn_ln", r, c), "excitatory weight is negative");
    }

    if (weights.w_ln_pn.rows != config.n_pn || weights.w_ln_pn.cols != config.n_ln) {
        add("w_ln_pn", "shape is not [n_pn x n_ln]");
    } else {
        for (std::size_t r = 0; r < weights.w_ln_pn.rows; ++r)
            for (std::size_t c = 0; c < weights.w_ln_pn.cols; ++c)
                if (!(weights.w_ln_pn(r, c) <= 0.0)) add(idx("w_ln_pn", r, c), "inhibitory weight is positive");
    }

    if (config.w_sfa() > 0.0) add("w_sfa", "adaptation weight is positive");

    if (weights.kc_fan_in != config.kc_fan_in ||
        weights.kc_inputs.size() != static_cast<std::size_t>(config.n_kc) * config.kc_fan_in) {
        add("kc_inputs", "fan-in table size is not n_kc x kc_fan_in");
    } else {
        for (std::size_t i = 0; i < config.n_kc; ++i) {
            const auto in = weights.inputs_of_kc(i);
            for (std::size_t a = 0; a < in.size(); ++a) {
                if (in[a] >= config.n_pn) {
                    add("kc_inputs[" + std::to_string(i) + "]",
                        "PN index " + std::to_string(in[a]) + " out of range");
                }
                for (std::size_t b = 0; b < a; ++b) {
                    if (in[a] == in[b]) {
                        add("kc_inputs[" + std::to_string(i) + "]",
                            "duplicate PN index " + std::to_string(in[a]));
                    }
                }
            }
        }
    }

    if (weights.w_kc_mbon.rows != config.n_mbon || weights.w_kc_mbon.cols != config.n_kc) {
        add("w_kc_mbon", "shape is not [n_mbon x n_kc]");
    } else {
        for (std::size_t r = 0; r < weights.w_kc_mbon.rows; ++r)
            for (std::size_t c = 0; c < weights.w_kc_mbon.cols; ++c)
                if (!std::isfinite(weights.w_kc_mbon(r, c))) add(idx("w_kc_mbon", r, c), "non-finite weight");
    }
    return out;
}

std::uint64_t config_hash(const nlohmann::json& canonical) {
    const std::string s = canonical.dump();
    return rng::fnv1a64({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
}

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_checkpoint(const std::filesystem::path& path, const CircuitConfig& config,
                      const WeightSet& weights) {
    const nlohmann::json cfg = to_json(config);
    std::vector<float> w(weights.w_kc_mbon.data.begin(), weights.w_kc_mbon.data.end());
    container::write(path,
                     {{"format", kCheckpointFormat},
                      {"version", kCheckpointFormatVersion},
                      {"circuit", cfg},
                      {"config_hash", hash_hex(config_hash(cfg))}},
                     {{"w_kc_mbon", container::DType::f32, weights.w_kc_mbon.rows,
                       weights.w_kc_mbon.cols, container::encode_f32(w)}});
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    container::Contents c = container::read(path, kCheckpointFormat, kCheckpointFormatVersion);
    Checkpoint out;
    try {
        out.config = circuit_config_from_json(c.manifest.at("circuit"));
        out.config_hash = c.manifest.at("config_hash").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed checkpoint manifest: ") + e.what());
    }
    if (hash_hex(config_hash(to_json(out.config))) != out.config_hash) {
        throw FormatError("checkpoint config hash does not match its stored config");
    }
    auto it = c.blocks.find("w_kc_mbon");
    if (it == c.blocks.end()) throw FormatError("checkpoint has no w_kc_mbon block");
    if (it->second.rows != out.config.n_mbon || it->second.cols != out.config.n_kc) {
        throw FormatError("checkpoint weight block shape does not match its config");
    }
    const std::vector<float> w = container::decode_f32(it->second);
    out.w_kc_mbon = Matrix(it->second.rows, it->second.cols);
    for (std::size_t i = 0; i < w.size(); ++i) out.w_kc_mbon.data[i] = static_cast<double>(w[i]);
    return out;
}

}  // namespace flysnn

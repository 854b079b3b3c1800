#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "flysnn/circuit.hpp"
#include "flysnn/errors.hpp"

namespace fs = std::filesystem;
using namespace flysnn;

namespace {

CircuitConfig small_circuit() {
    CircuitConfig c;
    c.n_kc = 200;
    c.n_mbon = 7;
    c.enable_li = true;
    c.enable_sfa = true;
    return c;
}

bool mentions(const std::vector<Violation>& v, const std::string& location) {
    return std::any_of(v.begin(), v.end(), [&](const Violation& x) { return x.location == location; });
}

}  // namespace

TEST_CASE("fresh topology satisfies every structural invariant") {
    const CircuitConfig c = small_circuit();
    const WeightSet w = build_topology(c);
    CHECK(validate(w, c).empty());
    for (std::uint32_t i = 0; i < c.n_kc; ++i) {
        const auto in = w.inputs_of_kc(i);
        REQUIRE(in.size() == c.kc_fan_in);
        const std::set<std::uint32_t> distinct(in.begin(), in.end());
        CHECK(distinct.size() == c.kc_fan_in);
        for (std::uint32_t p : in) CHECK(p < c.n_pn);
    }
    for (double x : w.w_ln_pn.data) CHECK(x == doctest::Approx(-0.2 / 20));
    for (double x : w.w_orn_ln.data) CHECK(x == doctest::Approx(1.0 / 50));
    for (double x : w.w_kc_mbon.data) {
        CHECK(x >= 0.0);
        CHECK(x < c.kc_mbon_init_max);
    }
}

TEST_CASE("fan-in sampling covers the PN pool roughly uniformly") {
    CircuitConfig c = small_circuit();
    c.n_kc = 2000;
    const WeightSet w = build_topology(c);
    std::vector<int> hits(c.n_pn, 0);
    for (std::uint32_t p : w.kc_inputs) ++hits[p];
    const double expected = 2000.0 * 6 / 50;
    for (int h : hits) CHECK(std::abs(h - expected) < 5.0 * std::sqrt(expected));
}

TEST_CASE("topology is a pure function of the config") {
    const CircuitConfig c = small_circuit();
    CHECK(build_topology(c) == build_topology(c));
    CircuitConfig d = c;
    d.seed = 2;
    CHECK_FALSE(build_topology(d) == build_topology(c));
}

TEST_CASE("violations name the offending entry") {
    const CircuitConfig c = small_circuit();
    WeightSet w = build_topology(c);
    w.w_ln_pn(3, 5) = 0.1;
    CHECK(mentions(validate(w, c), "w_ln_pn[3,5]"));

    w = build_topology(c);
    w.kc_inputs[17 * c.kc_fan_in + 1] = w.kc_inputs[17 * c.kc_fan_in];
    const auto v = validate(w, c);
    REQUIRE(v.size() == 1);
    CHECK(v[0].location == "kc_inputs[17]");
    CHECK(v[0].message.find("duplicate") != std::string::npos);

    w = build_topology(c);
    w.kc_inputs[0] = c.n_pn;
    CHECK(mentions(validate(w, c), "kc_inputs[0]"));
}

TEST_CASE("presets scale the base magnitudes") {
    CircuitConfig c = small_circuit();
    for (Preset p : {Preset::low, Preset::medium, Preset::high}) {
        c.li_preset = c.sfa_preset = p;
        CHECK(c.li_magnitude() == doctest::Approx(multiplier(p) * 0.1));
        CHECK(c.w_sfa() == doctest::Approx(-multiplier(p) * 0.05));
    }
    c.enable_sfa = false;
    c.pn_ln_sfa_bias = 0.3;
    CHECK(c.w_sfa() == 0.0);
    CHECK(c.bias() == 0.0);
    c.enable_li = false;
    c.pn_li_compensation_gain = 1.4;
    CHECK(c.pn_drive_gain() == 1.0);
}

TEST_CASE("variants switch the mechanisms") {
    const CircuitConfig c = small_circuit();
    CHECK_FALSE(with_variant(c, Variant::baseline).enable_li);
    CHECK_FALSE(with_variant(c, Variant::baseline).enable_sfa);
    CHECK(with_variant(c, Variant::li).enable_li);
    CHECK_FALSE(with_variant(c, Variant::li).enable_sfa);
    CHECK(with_variant(c, Variant::full).enable_li);
    CHECK(with_variant(c, Variant::full).enable_sfa);
    for (const char* s : {"baseline", "li", "sfa", "full"}) CHECK(to_string(parse_variant(s)) == s);
    CHECK_THROWS_AS(parse_variant("both"), ConfigError);
    CHECK_THROWS_AS(parse_preset("extreme"), ConfigError);
}

TEST_CASE("invalid circuit configs are rejected") {
    CircuitConfig c = small_circuit();
    c.kc_fan_in = 51;
    CHECK_THROWS_AS(build_topology(c), ConfigError);
    c = small_circuit();
    c.w0_li = -0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_circuit();
    c.n_kc = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("config json round trips and the hash tracks every field") {
    CircuitConfig c = small_circuit();
    c.li_preset = Preset::high;
    c.pn_ln_sfa_bias = 0.03;
    const auto j = to_json(c);
    CHECK(to_json(circuit_config_from_json(j)) == j);
    const std::uint64_t h = config_hash(j);
    CHECK(hash_hex(h).size() == 16);
    for (const auto& [key, value] : j.items()) {
        auto k = j;
        if (value.is_boolean()) {
            k[key] = !value.get<bool>();
        } else if (value.is_string()) {
            k[key] = "medium" == value.get<std::string>() ? "low" : "medium";
        } else if (value.is_number_float()) {
            k[key] = value.get<double>() + 0.5;
        } else {
            k[key] = value.get<std::uint64_t>() + 1;
        }
        CHECK_MESSAGE(config_hash(k) != h, key);
    }
}

TEST_CASE("checkpoints restore the readout and config") {
    const fs::path dir = fs::temp_directory_path() / "flysnn_unit";
    fs::create_directories(dir);
    const CircuitConfig c = small_circuit();
    WeightSet w = build_topology(c);
    w.w_kc_mbon(2, 3) = -1.25;
    const fs::path p = dir / "checkpoint.bin";
    write_checkpoint(p, c, w);
    const Checkpoint back = read_checkpoint(p);
    CHECK(to_json(back.config) == to_json(c));
    CHECK(back.config_hash == hash_hex(config_hash(to_json(c))));
    REQUIRE(back.w_kc_mbon.rows == c.n_mbon);
    REQUIRE(back.w_kc_mbon.cols == c.n_kc);
    for (std::size_t i = 0; i < w.w_kc_mbon.data.size(); ++i)
        CHECK(back.w_kc_mbon.data[i] == static_cast<double>(static_cast<float>(w.w_kc_mbon.data[i])));
    CHECK(build_topology(back.config).kc_inputs == w.kc_inputs);
}

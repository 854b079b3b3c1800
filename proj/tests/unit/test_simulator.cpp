#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "flysnn/circuit.hpp"
#include "flysnn/container.hpp"
#include "flysnn/errors.hpp"
#include "flysnn/harness.hpp"
#include "flysnn/simulator.hpp"
#include "oracles.hpp"

using namespace flysnn;

namespace {

CircuitConfig compact_circuit() {
    CircuitConfig c;
    c.n_kc = 300;
    c.n_mbon = 5;
    c.kc_mbon_init_max = 0.3;
    return c;
}

DatasetConfig compact_data(double sigma = 0.0) {
    DatasetConfig d;
    d.n_classes = 5;
    d.n_train = 20;
    d.n_test = 5;
    d.noise_intensity = sigma;
    return d;
}

}  // namespace

TEST_CASE("all-zero input leaves the network silent") {
    CircuitConfig c = compact_circuit();
    c.enable_li = c.enable_sfa = true;
    const WeightSet w = build_topology(c);
    const OdorSample zero{0, 0, std::vector<float>(c.n_orn, 0.0f), std::nullopt};
    const TrialRecording rec = run_trial(zero, w, c, {});
    CHECK(rec.counts == LayerCounts{});
    CHECK(rec.kc_coding_level == 0.0);
    for (double v : rec.mbon.v) CHECK(v == 0.0);
    for (double u : rec.mbon.u) CHECK(u == 0.0);
}

TEST_CASE("mechanism-free trials match an independent re-implementation bit for bit") {
    const CircuitConfig c = compact_circuit();
    const WeightSet w = build_topology(c);
    const Dataset d = generate_dataset(compact_data(0.3));
    const TrialProtocol protocol;
    for (const OdorSample& s : d.train) {
        const TrialRecording rec = run_trial(s, w, c, protocol);
        const auto ref = oracle::reference_baseline_trial(s.intensities, w, c, 10, 30);
        CHECK(rec.kc_spikes.dense() == ref.kc);
        CHECK(rec.mbon.v == ref.mbon_v);
    }
}

TEST_CASE("baseline-period MBON potentials are zero without bias") {
    CircuitConfig c = compact_circuit();
    c.enable_li = c.enable_sfa = true;
    const WeightSet w = build_topology(c);
    const Dataset d = generate_dataset(compact_data(0.2));
    const TrialRecording rec = run_trial(d.train[0], w, c, {});
    REQUIRE(rec.counts.kc > 0);
    for (std::uint32_t t = 0; t < 10; ++t)
        for (std::uint32_t j = 0; j < c.n_mbon; ++j) CHECK(rec.mbon.v_at(t, j) == 0.0);
}

TEST_CASE("one driven ORN reaches exactly the KCs wired to its PN") {
    CircuitConfig c;
    c.n_orn = c.n_pn = 5;
    c.n_ln = 2;
    c.n_kc = 4;
    c.n_mbon = 2;
    c.kc_fan_in = 2;
    WeightSet w = build_topology(c);
    w.kc_inputs = {2, 0, 1, 3, 4, 2, 0, 1};  // KC0 and KC2 listen to PN2
    REQUIRE(validate(w, c).empty());
    OdorSample s{0, 0, std::vector<float>(5, 0.0f), std::nullopt};
    s.intensities[2] = 1.0f;
    const TrialRecording rec = run_trial(s, w, c, TrialProtocol{0.0, 3.0, 1.0});

    // ORN2 sees 1.0 per step and fires every step (u = 1.0, 1.181, 1.345);
    // PN2 relays each spike with weight 1. Driven KCs integrate 0.3 per step:
    // 0.3, 0.3*b + 0.3, then cross 0.8 on the third step.
    const double b = std::exp(-0.1);
    CHECK(rec.counts.orn == 3);
    CHECK(rec.counts.pn == 3);
    for (std::uint32_t t = 0; t < 3; ++t) {
        CHECK_FALSE(rec.kc_spikes.at(t, 1));
        CHECK_FALSE(rec.kc_spikes.at(t, 3));
    }
    CHECK_FALSE(rec.kc_spikes.at(0, 0));
    CHECK_FALSE(rec.kc_spikes.at(1, 0));
    CHECK(rec.kc_spikes.at(2, 0));
    CHECK(rec.kc_spikes.at(2, 2));
    CHECK(0.3 * b * b + 0.3 * b + 0.3 >= 0.8);
    CHECK(0.3 * b + 0.3 < 0.8);
    CHECK(rec.counts.kc == 2);
}

TEST_CASE("trials are deterministic and OU trials follow the stream") {
    CircuitConfig c = compact_circuit();
    c.enable_li = c.enable_sfa = true;
    c.pn_ln_sfa_bias = 0.02;
    const WeightSet w = build_topology(c);
    DatasetConfig dc = compact_data(0.4);
    dc.noise_kind = NoiseKind::ou;
    const Dataset d = generate_dataset(dc);
    const TrialRecording a = run_trial(d.train[3], w, c, {}, &dc);
    const TrialRecording b = run_trial(d.train[3], w, c, {}, &dc);
    CHECK(a.mbon.v == b.mbon.v);
    CHECK(a.mbon.u == b.mbon.u);
    CHECK(a.kc_spikes == b.kc_spikes);
    CHECK(a.counts == b.counts);
    const TrialRecording quiet = run_trial(d.train[3], w, c, {});
    CHECK_FALSE(quiet.kc_spikes == a.kc_spikes);
}

TEST_CASE("mean potential over the readout window") {
    MbonTrace tr;
    tr.n_steps = 4;
    tr.n_mbon = 2;
    tr.v = {9.0, 9.0, 9.0, 9.0, 0.2, 0.7, 0.4, 0.7};
    tr.u = tr.v;
    tr.spikes.assign(8, 0);
    const auto m = mean_mbon_potential(tr, TrialProtocol{2.0, 2.0, 1.0});
    CHECK(m[0] == doctest::Approx(0.3));
    CHECK(m[1] == doctest::Approx(0.7));
    CHECK_THROWS_AS(mean_mbon_potential(tr, TrialProtocol{2.0, 3.0, 1.0}), ContractError);
}

TEST_CASE("recorded readout equals re-simulation from the KC raster") {
    const CircuitConfig c = compact_circuit();
    const WeightSet w = build_topology(c);
    const Dataset d = generate_dataset(compact_data(0.2));
    for (const OdorSample& s : d.test) {
        const TrialRecording rec = run_trial(s, w, c, {});
        const auto ref = oracle::reference_baseline_trial(s.intensities, w, c, 10, 30);
        const auto mean = mean_mbon_potential(rec);
        for (std::uint32_t j = 0; j < c.n_mbon; ++j) {
            double sum = 0.0;
            for (std::uint32_t t = 10; t < 40; ++t) sum += ref.mbon_v[std::size_t(t) * c.n_mbon + j];
            CHECK(mean[j] == doctest::Approx(sum / 30.0).epsilon(1e-14));
        }
    }
}

TEST_CASE("recorded spikes agree with pre-reset potentials") {
    CircuitConfig c = compact_circuit();
    c.kc_mbon_init_max = 1.0;
    c.enable_sfa = true;
    const WeightSet w = build_topology(c);
    const Dataset d = generate_dataset(compact_data(0.3));
    std::uint64_t total = 0;
    for (const OdorSample& s : d.train) {
        const TrialRecording rec = run_trial(s, w, c, {});
        std::uint64_t implied = 0;
        for (std::size_t i = 0; i < rec.mbon.u.size(); ++i) {
            const bool crossed = rec.mbon.u[i] >= c.v_th_mbon;
            CHECK(crossed == static_cast<bool>(rec.mbon.spikes[i]));
            implied += crossed;
        }
        CHECK(implied == rec.counts.mbon);
        total += implied;
        CHECK(rec.mbon.n_steps == 40);
        CHECK(rec.kc_spikes.n_cols() == c.n_kc);
        CHECK(rec.kc_coding_level >= 0.0);
        CHECK(rec.kc_coding_level <= 1.0);
    }
    CHECK(total > 0);
}

TEST_CASE("shape mismatches are configuration errors") {
    const CircuitConfig c = compact_circuit();
    const WeightSet w = build_topology(c);
    const OdorSample s{0, 0, std::vector<float>(7, 0.5f), std::nullopt};
    CHECK_THROWS_AS(run_trial(s, w, c, {}), ConfigError);
    CircuitConfig other = c;
    other.n_mbon = 3;
    const OdorSample ok{0, 0, std::vector<float>(c.n_orn, 0.5f), std::nullopt};
    CHECK_THROWS_AS(run_trial(ok, w, other, {}), ConfigError);
}

TEST_CASE("calibration of absent or null mechanisms is trivial") {
    const RunSettings desk = profile_defaults(Profile::desk);
    CircuitConfig c = desk.circuit;
    c.n_kc = 100;
    const Dataset d = generate_dataset(compact_data());
    const auto batch = std::span<const OdorSample>(d.train);
    Compensation k = calibrate_compensation(c, batch, {});
    CHECK(k.pn_li_compensation_gain == 1.0);
    CHECK(k.pn_ln_sfa_bias == 0.0);

    c.enable_li = true;
    c.w0_li = 0.0;
    k = calibrate_compensation(c, batch, {});
    CHECK(k.pn_li_compensation_gain == 1.0);
    CHECK(k.achieved_rate == doctest::Approx(k.baseline_rate));

    CHECK(compensation_gain_grid().size() == 21);
    CHECK(compensation_gain_grid().back() == doctest::Approx(2.0));
    CHECK(compensation_bias_grid().size() == 51);
    CHECK(compensation_bias_grid().back() == doctest::Approx(0.5));
}

TEST_CASE("calibrated LI restores the PN rate and does not raise the coding level") {
    RunSettings s = profile_defaults(Profile::desk);
    s.variant = Variant::li;
    s.data.n_train = 200;
    s.data.n_test = 10;
    s.data.noise_intensity = 0.1;
    const Dataset d = generate_dataset(s.data);
    const ResolvedCircuit r = resolve_circuit(s, d);
    CHECK(r.compensation.pn_li_compensation_gain >= 1.0);
    CHECK(std::abs(r.compensation.achieved_rate - r.compensation.baseline_rate) <=
          0.05 * r.compensation.baseline_rate);

    const CircuitConfig base = with_variant(r.circuit, Variant::baseline);
    const WeightSet wb = build_topology(base);
    const WeightSet wl = build_topology(r.circuit);
    double coding_base = 0.0, coding_li = 0.0;
    for (std::size_t i = 0; i < 100; ++i) {
        coding_base += simulate_upstream(d.train[i], wb, base, {}).kc_coding_level;
        coding_li += simulate_upstream(d.train[i], wl, r.circuit, {}).kc_coding_level;
    }
    CHECK(coding_li <= coding_base);
}

TEST_CASE("trial dumps are readable containers") {
    const CircuitConfig c = compact_circuit();
    const WeightSet w = build_topology(c);
    const Dataset d = generate_dataset(compact_data(0.1));
    const TrialRecording rec = run_trial(d.train[0], w, c, {});
    const auto p = std::filesystem::temp_directory_path() / "flysnn_unit" / "trial.bin";
    std::filesystem::create_directories(p.parent_path());
    write_trial_dump(p, rec);
    const auto contents = container::read(p, kTrialDumpFormat, kTrialDumpFormatVersion);
    CHECK_FALSE(contents.blocks.empty());
}

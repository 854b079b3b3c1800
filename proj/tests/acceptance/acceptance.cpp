// Acceptance suite: one PASS/FAIL line per criterion.
//
// Usage: acceptance [--only 1,2,...] [--workers N] [--cache DIR]
// The training criteria (3, 4, 5) cache their cells as CSV files in DIR, so
// an interrupted run resumes where it stopped.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "flysnn/cli.hpp"
#include "flysnn/dynamics.hpp"
#include "flysnn/harness.hpp"
#include "flysnn/odor_data.hpp"
#include "flysnn/rng.hpp"
#include "flysnn/trainer.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace flysnn;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Context {
    unsigned workers = 1;
    fs::path cache;
};

std::string sci(double x) {
    std::ostringstream s;
    s.precision(2);
    s << std::scientific << x;
    return s.str();
}

std::string fmt(double x, int digits = 4) {
    std::ostringstream s;
    s.precision(digits);
    s << std::fixed << x;
    return s.str();
}

// ---- 1 ---------------------------------------------------------------------

Matrix reverse_gradient(const oracle::TinyInstance& x, SurrogateParams sg) {
    const SpikeRaster r = x.raster();
    const MbonTrace tr = simulate_mbon(r, x.w, x.config());
    const SoftmaxXent xe = softmax_xent(mean_mbon_potential(tr, x.protocol()), x.label);
    Matrix g(x.n_mbon, x.n_kc);
    backward_kc_mbon(tr, r, xe.grad, x.protocol(), x.config(), sg, g);
    return g;
}

Outcome gradient_oracle(const Context&) {
    std::mt19937_64 gen(2024);
    // In the sharp-surrogate limit the reverse sweep of a spike-free trial is
    // the exact derivative of the hard-threshold forward pass.
    const SurrogateParams sharp{1.0, 1e8};
    double worst_fd = 0.0;
    int spike_free = 0;
    while (spike_free < 30) {
        const oracle::TinyInstance x = oracle::random_instance(gen, 0.12);
        const MbonTrace tr = simulate_mbon(x.raster(), x.w, x.config());
        if (*std::max_element(tr.u.begin(), tr.u.end()) > x.config().v_th_mbon - 1e-3) continue;
        worst_fd = std::max(worst_fd, oracle::max_relative_error(reverse_gradient(x, sharp), oracle::finite_difference(x), 1e-7));
        ++spike_free;
    }

    double worst_tangent = 0.0;
    int spiking = 0;
    while (spiking < 30) {
        const oracle::TinyInstance x = oracle::random_instance(gen, 1.0, 0.5);
        if (!oracle::forward(x, x.w).any_spike) continue;
        worst_tangent = std::max(worst_tangent, oracle::max_relative_error(reverse_gradient(x, {}), oracle::tangent_gradient(x, 1.0, 2.0)));
        ++spiking;
    }

    // Recorded with tests/support/golden_gradient.py (50-digit arithmetic).
    oracle::TinyInstance g;
    g.n_kc = 3;
    g.n_mbon = 2;
    g.n_baseline = 2;
    g.n_stim = 6;
    g.kc = {0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 1, 1, 1, 1, 1, 0, 1, 0, 1, 0, 1, 1, 1};
    g.w = Matrix(2, 3);
    g.w.data = {0.9, 0.45, -0.2, 0.3, 0.7, 0.65};
    g.label = 1;
    Matrix golden(2, 3);
    golden.data = {0.223892176778590034,  0.19928656253318454671,  0.14044996375092688852,
                   -0.12500169806821205689, -0.11286463666667382984, -0.14929104319796068705};
    const double golden_err = oracle::max_relative_error(reverse_gradient(g, {}), golden);

    return {worst_fd < 1e-4 && worst_tangent < 1e-12 && golden_err < 1e-13,
            "spike-free vs FD max rel " + sci(worst_fd) + " (30 instances); spiking vs tangent oracle " +
                sci(worst_tangent) + " (30 instances); golden " + sci(golden_err)};
}

// ---- 2 ---------------------------------------------------------------------

Outcome kernel_exactness(const Context&) {
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> v(-2.0, 2.0), in(-1.0, 3.0), tau(1.0, 100.0), dt(0.1, 2.0), a0(0.0, 5.0);
    std::bernoulli_distribution fire(0.3);
    std::uniform_int_distribution<int> len(1, 60);
    double worst = 0.0;
    const int cases = 10000;
    for (int i = 0; i < cases; ++i) {
        NeuronParams p;
        p.tau_m = tau(gen);
        p.dt = dt(gen);
        const double v0 = v(gen), i0 = in(gen);
        const LifStep r = lif_step(v0, i0, p);
        const double u = std::exp(-p.dt / p.tau_m) * v0 + i0;
        const double expected = u >= p.v_th ? u - p.v_th : u;
        worst = std::max(worst, std::abs(r.v - expected));
        if (r.spike != (u >= p.v_th)) worst = 1.0;

        const double tau_a = tau(gen), step = dt(gen);
        const int n = len(gen);
        std::vector<std::uint8_t> spikes(n);
        for (auto& s : spikes) s = fire(gen);
        const double start = a0(gen);
        SfaState sfa(1, tau_a, step);
        sfa.a[0] = start;
        LiTraceState trace(1, tau_a, step);
        trace.t[0] = start;
        double closed = start * std::exp(-n * step / tau_a);
        for (int t = 0; t < n; ++t) {
            sfa_update(sfa, std::vector<std::uint8_t>{spikes[t]});
            li_trace_update(trace, std::vector<std::uint8_t>{spikes[t]});
            if (spikes[t]) closed += std::exp(-(n - 1 - t) * step / tau_a);
        }
        worst = std::max({worst, std::abs(sfa.a[0] - closed), std::abs(trace.t[0] - closed)});
    }
    return {worst < 1e-12, std::to_string(3 * cases) + " kernel evaluations, max abs error " + sci(worst)};
}

// ---- 3, 4, 5 -----------------------------------------------------------------

constexpr double kLowNoise = 0.1;
constexpr double kHighNoise = 0.5;

// Runs (or resumes) one desk-profile grid over seeds 1..3 and returns its
// rows. Successful rows of the grids named in `reuse` seed the cache first.
std::vector<SweepRow> desk_grid(const Context& ctx, const std::string& name, std::vector<Variant> variants,
                                std::vector<double> noise, const std::vector<std::string>& reuse = {}) {
    SweepSpec spec;
    spec.base = profile_defaults(Profile::desk);
    spec.variants = std::move(variants);
    spec.noise_intensities = std::move(noise);
    spec.class_counts = {spec.base.data.n_classes};
    spec.presets = {Preset::medium};
    spec.seeds = {1, 2, 3};
    fs::create_directories(ctx.cache);
    const fs::path csv = ctx.cache / (name + ".csv");

    std::vector<SweepRow> seed_rows;
    if (fs::exists(csv)) seed_rows = read_sweep_csv(csv, true);
    for (const std::string& other : reuse) {
        const fs::path p = ctx.cache / (other + ".csv");
        if (!fs::exists(p)) continue;
        for (SweepRow& r : read_sweep_csv(p, true))
            if (r.ok()) seed_rows.push_back(std::move(r));
    }
    write_sweep_csv(csv, seed_rows);

    run_sweep(spec, csv, ctx.workers, [](const SweepRow& r) {
        std::cerr << "  cell " << r.variant << " noise=" << r.noise_intensity << " seed=" << r.seed
                  << " acc=" << fmt(r.test_acc) << " " << r.status << " (" << fmt(r.wall_s, 1) << " s)\n";
    });
    return read_sweep_csv(csv);
}

std::map<std::string, double> means_at(const std::vector<SweepRow>& rows, double noise, std::string& failures) {
    std::map<std::string, std::vector<double>> acc;
    for (const SweepRow& r : rows) {
        if (std::abs(r.noise_intensity - noise) > 1e-12) continue;
        if (!r.ok()) {
            failures += " " + r.variant + "/seed" + std::to_string(r.seed) + ": " + r.status + ";";
            continue;
        }
        acc[r.variant].push_back(r.test_acc);
    }
    std::map<std::string, double> out;
    for (const auto& [v, xs] : acc) {
        if (xs.size() != 3) continue;
        double s = 0.0;
        for (double x : xs) s += x;
        out[v] = s / 3.0;
    }
    return out;
}

std::string describe(const std::map<std::string, double>& m) {
    std::string s;
    for (const char* v : {"baseline", "li", "sfa", "full"}) {
        if (m.count(v)) s += std::string(s.empty() ? "" : ", ") + v + " " + fmt(100.0 * m.at(v), 2) + "%";
    }
    return s;
}

Outcome noise_free_ordering(const Context& ctx) {
    const auto rows = desk_grid(ctx, "noise_free", {Variant::baseline, Variant::li, Variant::sfa}, {0.0});
    std::string failures;
    const auto m = means_at(rows, 0.0, failures);
    if (!m.count("baseline") || !m.count("li") || !m.count("sfa")) return {false, "missing cells:" + failures};
    const double gap_ls = m.at("li") - m.at("sfa"), gap_sb = m.at("sfa") - m.at("baseline");
    return {gap_ls > 0.01 && gap_sb > 0.01, "sigma 0, 3 seeds: " + describe(m) + failures};
}

Outcome high_noise_reversal(const Context& ctx) {
    const auto rows = desk_grid(ctx, "high_noise", {Variant::baseline, Variant::li, Variant::sfa}, {kHighNoise});
    std::string failures;
    const auto m = means_at(rows, kHighNoise, failures);
    if (!m.count("baseline") || !m.count("li") || !m.count("sfa")) return {false, "missing cells:" + failures};
    const bool ok = m.at("sfa") - m.at("baseline") > 0.01 && m.at("sfa") - m.at("li") > 0.01;
    return {ok, "sigma " + fmt(kHighNoise, 2) + ", 3 seeds: " + describe(m) + failures};
}

Outcome additivity(const Context& ctx) {
    const auto rows =
        desk_grid(ctx, "additivity", {Variant::li, Variant::sfa, Variant::full}, {0.0, kLowNoise}, {"noise_free"});
    bool ok = true;
    std::string detail;
    for (double noise : {0.0, kLowNoise}) {
        std::string failures;
        const auto m = means_at(rows, noise, failures);
        if (!m.count("full") || !m.count("li") || !m.count("sfa")) {
            ok = false;
            detail += "sigma " + fmt(noise, 2) + ": missing cells:" + failures + " ";
            continue;
        }
        ok = ok && m.at("full") >= std::max(m.at("li"), m.at("sfa")) - 0.005;
        detail += "sigma " + fmt(noise, 2) + ": " + describe(m) + failures + "; ";
    }
    return {ok, detail.substr(0, detail.find_last_not_of("; ") + 1)};
}

// ---- 6 ---------------------------------------------------------------------

Outcome convergence_metric(const Context&) {
    TrainConfig cfg;
    struct Case {
        const char* name;
        std::vector<double> series;
        std::optional<std::uint32_t> expected;
    };
    std::vector<Case> cases;
    cases.push_back({"constant", std::vector<double>(30, 0.6), 11u});
    {
        std::vector<double> s;
        for (int i = 0; i < 50; ++i) s.push_back(0.01 * (i + 1));
        cases.push_back({"steady rise", s, std::nullopt});
    }
    {
        // Trailing means: 0.01 through epoch 20, then 0.009, ..., 0.003 at 27.
        std::vector<double> s;
        for (int i = 0; i < 20; ++i) s.push_back(0.01 * (i + 1));
        s.resize(40, 0.2);
        cases.push_back({"rise then flat", s, 28u});
    }
    {
        // One 0.05 jump entering at epoch 5 keeps the mean at 0.005 until it
        // leaves the window at epoch 15.
        std::vector<double> s(30, 0.5);
        for (int i = 4; i < 30; ++i) s[i] = 0.55;
        cases.push_back({"single jump", s, 15u});
    }
    {
        std::vector<double> s;
        for (int i = 0; i < 20; ++i) s.push_back(0.9 - 0.01 * i);
        cases.push_back({"declining", s, 11u});
    }
    bool ok = true;
    std::string detail;
    for (const Case& c : cases) {
        const auto got = convergence_epoch(c.series, cfg);
        ok = ok && got == c.expected;
        detail += std::string(c.name) + "=" + (got ? std::to_string(*got) : "none") + " ";
    }
    return {ok, detail.substr(0, detail.find_last_not_of(' ') + 1)};
}

// ---- 7 ---------------------------------------------------------------------

Outcome dataset_statistics(const Context&) {
    DatasetConfig c;
    c.n_orn = 1;
    c.noise_intensity = 0.1;
    const OdorPrototype mid{0, {0.5f}};
    const int n = 100000;
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = sample_gaussian(mid, static_cast<std::uint32_t>(i), c).intensities[0];
        s1 += x;
        s2 += x * x;
    }
    const double gauss_sd = std::sqrt(s2 / n - (s1 / n) * (s1 / n));

    c.noise_kind = NoiseKind::ou;
    c.noise_intensity = 0.5;
    c.ou_theta = 0.1;
    const OdorPrototype zero{0, {0.0f}};
    s1 = s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        OuNoiseStream st(sample_ou(zero, static_cast<std::uint32_t>(i), c), c);
        double y = 0.0;
        for (int t = 0; t < 30; ++t) y = st.next()[0];
        s1 += y;
        s2 += y * y;
    }
    const double ou_sd = std::sqrt(s2 / n - (s1 / n) * (s1 / n));

    DatasetConfig big;
    big.n_classes = 100;
    big.n_orn = 50;
    big.noise_intensity = 1.0;
    big.n_train = 16000;
    big.n_test = 4000;
    const Dataset d = generate_dataset(big, std::max(1u, std::thread::hardware_concurrency()));
    std::size_t components = 0, negative = 0;
    for (const auto* split : {&d.train, &d.test}) {
        for (const OdorSample& s : *split) {
            for (float x : s.intensities) {
                ++components;
                negative += !(x >= 0.0f);
            }
        }
    }
    const bool ok = std::abs(gauss_sd - 0.1) < 0.002 && std::abs(ou_sd - 0.5) < 0.01 && negative == 0 &&
                    components >= 1000000;
    return {ok, "gaussian sd " + fmt(gauss_sd, 5) + " (target 0.1), OU sd " + fmt(ou_sd, 5) + " (target 0.5), " +
                    std::to_string(negative) + " negatives in " + std::to_string(components) + " components"};
}

// ---- 8 ---------------------------------------------------------------------

std::vector<int> intervals(double drive, double w_sfa) {
    NeuronParams p;
    SfaState s(1, 50.0, 1.0);
    std::vector<int> isi;
    double v = 0.0;
    int last = -1;
    for (int t = 0; t < 500; ++t) {
        const LifStep r = lif_step(v, drive + w_sfa * s.a[0], p);
        v = r.v;
        sfa_update(s, std::vector<std::uint8_t>{static_cast<std::uint8_t>(r.spike)});
        if (r.spike) {
            if (last >= 0) isi.push_back(t - last);
            last = t;
        }
    }
    return isi;
}

Outcome adaptation_property(const Context&) {
    const double drive = 0.3;
    const auto adapted = intervals(drive, -0.1);
    const auto plain = intervals(drive, 0.0);
    bool ok = adapted.size() > 3 && plain.size() > 3 && adapted.back() > adapted.front();
    for (std::size_t i = 1; i < adapted.size(); ++i) ok = ok && adapted[i] >= adapted[i - 1];
    for (int x : plain) ok = ok && x == plain.front();
    std::string seq;
    for (std::size_t i = 0; i < std::min<std::size_t>(6, adapted.size()); ++i) seq += std::to_string(adapted[i]) + " ";
    return {ok, "drive 0.3: w_sfa=-0.1 intervals " + seq + "... " + std::to_string(adapted.back()) + "; w_sfa=0 " +
                    std::to_string(plain.size()) + " intervals of " + std::to_string(plain.front())};
}

// ---- 9 ---------------------------------------------------------------------

Outcome reduction_identity(const Context& ctx) {
    RunSettings s = profile_defaults(Profile::desk);
    s.data.n_classes = 20;
    s.data.n_train = 600;
    s.data.n_test = 200;
    s.data.noise_intensity = 0.2;
    s.train.epochs = 15;
    s.train.workers = ctx.workers;
    const Dataset d = generate_dataset(s.data, ctx.workers);
    s.variant = Variant::baseline;
    const RunOutcome base = run_training(s, d);
    s.variant = Variant::full;
    s.circuit.w0_li = 0.0;
    s.circuit.w0_sfa = 0.0;
    s.li_compensation_gain = 1.0;
    s.sfa_bias = 0.0;
    const RunOutcome full = run_training(s, d);
    const auto& a = base.result.report;
    const auto& b = full.result.report;
    const bool ok = a.test_acc == b.test_acc && a.val_acc == b.val_acc && a.train_loss == b.train_loss;
    return {ok, std::to_string(a.test_acc.size()) + " epochs, final acc " + fmt(a.test_acc.back()) + " vs " +
                    fmt(b.test_acc.back())};
}

// ---- 10 --------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Outcome determinism(const Context& ctx) {
    const fs::path root = ctx.cache / "determinism";
    fs::remove_all(root);
    const std::vector<std::string> flags{"train",   "--variant", "full",  "--n_classes",       "20",
                                         "--n_train", "600",     "--n_test", "200",            "--noise_intensity",
                                         "0.2",     "--epochs",  "8",     "--seed",            "5"};
    auto run = [&](const std::string& name, unsigned workers) {
        std::vector<std::string> args{"flysnn"};
        args.insert(args.end(), flags.begin(), flags.end());
        args.insert(args.end(), {"--workers", std::to_string(workers), "--out", (root / name).string()});
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    };
    const unsigned many = std::max(2u, ctx.workers);
    const int codes = run("seq1", 1) | run("seq2", 1) | run("par1", many) | run("par2", many);
    if (codes != 0) return {false, "train exited with a non-zero code"};
    bool ok = true;
    std::string detail;
    for (const char* f : {"report.json", "train_log.jsonl", "checkpoint.bin"}) {
        const std::string ref = slurp(root / "seq1" / f);
        const bool same = !ref.empty() && ref == slurp(root / "seq2" / f) && ref == slurp(root / "par1" / f) &&
                          ref == slurp(root / "par2" / f);
        ok = ok && same;
        detail += std::string(f) + (same ? " identical" : " DIFFERS") + "; ";
    }
    return {ok, detail + "workers 1,1," + std::to_string(many) + "," + std::to_string(many)};
}

}  // namespace

int main(int argc, char** argv) {
    Context ctx;
    ctx.workers = std::max(1u, std::thread::hardware_concurrency());
    ctx.cache = fs::current_path() / "acceptance_cache";
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--only" && i + 1 < argc) {
            std::stringstream s(argv[++i]);
            std::string item;
            while (std::getline(s, item, ',')) only.insert(std::stoi(item));
        } else if (a == "--workers" && i + 1 < argc) {
            ctx.workers = static_cast<unsigned>(std::stoul(argv[++i]));
        } else if (a == "--cache" && i + 1 < argc) {
            ctx.cache = argv[++i];
        } else {
            std::cerr << "usage: acceptance [--only 1,2,...] [--workers N] [--cache DIR]\n";
            return 2;
        }
    }

    const std::vector<std::pair<const char*, std::function<Outcome(const Context&)>>> criteria{
        {"gradient oracle", gradient_oracle},
        {"kernel exactness", kernel_exactness},
        {"noise-free ordering LI > SFA > Baseline", noise_free_ordering},
        {"high-noise reversal SFA > Baseline, SFA > LI", high_noise_reversal},
        {"additivity at low noise", additivity},
        {"convergence metric", convergence_metric},
        {"dataset statistics", dataset_statistics},
        {"SFA adaptation property", adaptation_property},
        {"reduction identity", reduction_identity},
        {"determinism", determinism},
    };

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!only.empty() && !only.count(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second(ctx);
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << " " << criteria[i].first << " | "
                  << o.detail << " | " << fmt(secs, 1) << " s" << std::endl;
    }
    return failed == 0 ? 0 : 1;
}

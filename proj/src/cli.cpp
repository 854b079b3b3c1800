#include "flysnn/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flysnn/errors.hpp"
#include "flysnn/harness.hpp"

namespace fs = std::filesystem;

namespace flysnn {
namespace {

// Collects optional flags and applies the ones the user set, in
// registration order, on top of the profile defaults.
class Binder {
public:
    explicit Binder(CLI::App* app) : app_(app) {}

    template <typename T, typename F>
    void opt(const std::string& name, const std::string& help, F apply) {
        auto slot = std::make_shared<std::optional<T>>();
        app_->add_option("--" + name, *slot, help);
        appliers_.push_back([slot, apply](RunSettings& s) {
            if (*slot) apply(s, **slot);
        });
    }

    void apply(RunSettings& s) const {
        for (const auto& f : appliers_) f(s);
    }

private:
    CLI::App* app_;
    std::vector<std::function<void(RunSettings&)>> appliers_;
};

struct Common {
    std::string profile = "desk";
    std::optional<std::uint64_t> seed;
    unsigned workers = 1;
    std::string out_dir;
    std::string config_file;
};

void add_common(CLI::App* app, Common& c, bool with_seed = true) {
    app->add_option("--profile", c.profile, "scale profile: desk or paper")->capture_default_str();
    if (with_seed) app->add_option("--seed", c.seed, "seed for data, topology and training");
    app->add_option("--workers", c.workers, "worker threads (results do not depend on it)")->capture_default_str();
    app->add_option("--out", c.out_dir, "output directory");
    app->add_option("--config", c.config_file, "key = value file overriding defaults (flags win)");
}

void add_dataset_flags(Binder& b) {
    b.opt<std::uint32_t>("n_classes", "odor classes", [](RunSettings& s, std::uint32_t v) {
        s.data.n_classes = v;
        s.circuit.n_mbon = v;
    });
    b.opt<std::uint32_t>("n_orn", "receptor channels", [](RunSettings& s, std::uint32_t v) {
        s.data.n_orn = v;
        s.circuit.n_orn = v;
        s.circuit.n_pn = v;
    });
    b.opt<std::string>("noise_kind", "gaussian or ou",
                       [](RunSettings& s, const std::string& v) { s.data.noise_kind = parse_noise_kind(v); });
    b.opt<double>("noise_intensity", "Gaussian sigma or OU stationary std",
                  [](RunSettings& s, double v) { s.data.noise_intensity = v; });
    b.opt<double>("ou_theta", "OU mean-reversion rate per ms", [](RunSettings& s, double v) { s.data.ou_theta = v; });
    b.opt<double>("ou_dt", "OU step in ms", [](RunSettings& s, double v) { s.data.ou_dt = v; });
    b.opt<std::uint32_t>("n_train", "training samples", [](RunSettings& s, std::uint32_t v) { s.data.n_train = v; });
    b.opt<std::uint32_t>("n_test", "test samples", [](RunSettings& s, std::uint32_t v) { s.data.n_test = v; });
}

void add_circuit_flags(Binder& b) {
    b.opt<std::string>("variant", "baseline, li, sfa or full",
                       [](RunSettings& s, const std::string& v) { s.variant = parse_variant(v); });
    b.opt<std::uint32_t>("n_ln", "local interneurons", [](RunSettings& s, std::uint32_t v) { s.circuit.n_ln = v; });
    b.opt<std::uint32_t>("n_kc", "Kenyon cells", [](RunSettings& s, std::uint32_t v) { s.circuit.n_kc = v; });
    b.opt<std::uint32_t>("kc_fan_in", "PN inputs per KC",
                         [](RunSettings& s, std::uint32_t v) { s.circuit.kc_fan_in = v; });
    b.opt<double>("w_pn_kc", "PN->KC weight", [](RunSettings& s, double v) { s.circuit.w_pn_kc = v; });
    b.opt<double>("kc_mbon_init_max", "upper bound of initial KC->MBON weights",
                  [](RunSettings& s, double v) { s.circuit.kc_mbon_init_max = v; });
    b.opt<double>("w_orn_pn", "ORN->PN gain", [](RunSettings& s, double v) { s.circuit.w_orn_pn = v; });
    b.opt<double>("w_orn_ln", "ORN->LN weight per synapse (negative: 1/n_orn)",
                  [](RunSettings& s, double v) { s.circuit.w_orn_ln = v; });
    b.opt<std::string>("li_preset", "low, medium or high",
                       [](RunSettings& s, const std::string& v) { s.circuit.li_preset = parse_preset(v); });
    b.opt<std::string>("sfa_preset", "low, medium or high",
                       [](RunSettings& s, const std::string& v) { s.circuit.sfa_preset = parse_preset(v); });
    b.opt<double>("w0_li", "base LN->PN magnitude", [](RunSettings& s, double v) { s.circuit.w0_li = v; });
    b.opt<double>("w0_sfa", "base SFA magnitude", [](RunSettings& s, double v) { s.circuit.w0_sfa = v; });
    b.opt<double>("orn_gain", "odor intensity to ORN current", [](RunSettings& s, double v) { s.circuit.orn_gain = v; });
    b.opt<double>("pn_li_compensation_gain", "fixed LI drive gain (default: calibrated)",
                  [](RunSettings& s, double v) { s.li_compensation_gain = v; });
    b.opt<double>("pn_ln_sfa_bias", "fixed SFA bias (default: calibrated)",
                  [](RunSettings& s, double v) { s.sfa_bias = v; });
    b.opt<std::uint32_t>("calibration_samples", "training samples used for calibration",
                         [](RunSettings& s, std::uint32_t v) { s.calibration_samples = v; });
    b.opt<double>("tau_m", "membrane time constant (ms)", [](RunSettings& s, double v) { s.circuit.tau_m = v; });
    b.opt<double>("v_th", "threshold of ORN/PN/LN/KC", [](RunSettings& s, double v) { s.circuit.v_th = v; });
    b.opt<double>("v_th_mbon", "MBON threshold", [](RunSettings& s, double v) { s.circuit.v_th_mbon = v; });
    b.opt<double>("tau_sfa", "SFA time constant (ms)", [](RunSettings& s, double v) { s.circuit.tau_sfa = v; });
    b.opt<double>("tau_trace", "LN trace time constant (ms)",
                  [](RunSettings& s, double v) { s.circuit.tau_trace = v; });
}

void add_train_flags(Binder& b) {
    b.opt<std::uint32_t>("epochs", "training epochs", [](RunSettings& s, std::uint32_t v) { s.train.epochs = v; });
    b.opt<std::uint32_t>("batch_size", "mini-batch size",
                         [](RunSettings& s, std::uint32_t v) { s.train.batch_size = v; });
    b.opt<double>("lr", "initial learning rate", [](RunSettings& s, double v) { s.train.lr = v; });
    b.opt<double>("adam_beta1", "Adam beta1", [](RunSettings& s, double v) { s.train.adam_beta1 = v; });
    b.opt<double>("adam_beta2", "Adam beta2", [](RunSettings& s, double v) { s.train.adam_beta2 = v; });
    b.opt<double>("adam_eps", "Adam epsilon", [](RunSettings& s, double v) { s.train.adam_eps = v; });
    b.opt<double>("l2_lambda", "coupled L2 coefficient", [](RunSettings& s, double v) { s.train.l2_lambda = v; });
    b.opt<double>("scheduler_factor", "plateau reduction factor",
                  [](RunSettings& s, double v) { s.train.scheduler_factor = v; });
    b.opt<std::uint32_t>("scheduler_patience", "plateau patience in epochs",
                         [](RunSettings& s, std::uint32_t v) { s.train.scheduler_patience = v; });
    b.opt<std::uint32_t>("convergence_window", "epochs averaged by the convergence rule",
                         [](RunSettings& s, std::uint32_t v) { s.train.convergence_window = v; });
    b.opt<double>("convergence_threshold", "mean per-epoch gain that counts as converged",
                  [](RunSettings& s, double v) { s.train.convergence_threshold = v; });
    b.opt<double>("val_fraction", "share of the training split held out",
                  [](RunSettings& s, double v) { s.train.val_fraction = v; });
    b.opt<double>("surrogate_k1", "surrogate amplitude", [](RunSettings& s, double v) { s.train.surrogate.k1 = v; });
    b.opt<double>("surrogate_k2", "surrogate steepness", [](RunSettings& s, double v) { s.train.surrogate.k2 = v; });
}

RunSettings settings_from(const Common& c, const Binder& b) {
    RunSettings s = profile_defaults(parse_profile(c.profile));
    if (c.seed) s.set_seed(*c.seed);
    b.apply(s);
    s.train.workers = std::max(1u, c.workers);
    return s;
}

fs::path out_dir(const Common& c) {
    fs::path dir = c.out_dir.empty() ? fs::path(".") : fs::path(c.out_dir);
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed for " + path.string());
}

Dataset load_or_generate(const std::string& dataset_path, const RunSettings& s) {
    if (!dataset_path.empty()) return read_dataset(dataset_path).dataset;
    return generate_dataset(s.data, s.train.workers);
}

// Adopts the stored data config so flags and file agree.
void adopt_dataset_config(RunSettings& s, const Dataset& ds) {
    s.data = ds.config;
    s.circuit.n_mbon = ds.config.n_classes;
    s.circuit.n_orn = ds.config.n_orn;
    s.circuit.n_pn = ds.config.n_orn;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Reads `key = value` lines ('#' starts a comment) into flag tokens.
std::vector<std::string> config_file_tokens(const std::string& path, const CLI::App* sub) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::vector<std::string> tokens;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front()) {
            value = value.substr(1, value.size() - 2);
        }
        for (char& ch : key) {
            if (ch == '-') ch = '_';
        }
        if (key == "config" || sub->get_option_no_throw("--" + key) == nullptr) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "' for '" +
                              sub->get_name() + "'");
        }
        tokens.push_back("--" + key + "=" + value);
    }
    return tokens;
}

std::string config_path_in(const std::vector<std::string>& args) {
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
    }
    return "";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Spiking olfactory circuit: data generation, training, sweeps and reports", "flysnn"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    // gen
    CLI::App* gen = app.add_subcommand("gen", "generate a dataset file");
    Common gen_c;
    add_common(gen, gen_c);
    Binder gen_b(gen);
    add_dataset_flags(gen_b);

    // train
    CLI::App* trn = app.add_subcommand("train", "train the KC->MBON readout");
    Common trn_c;
    std::string trn_dataset;
    add_common(trn, trn_c);
    trn->add_option("--dataset", trn_dataset, "dataset file (generated from flags when omitted)");
    Binder trn_b(trn);
    add_dataset_flags(trn_b);
    add_circuit_flags(trn_b);
    add_train_flags(trn_b);

    // eval
    CLI::App* evl = app.add_subcommand("eval", "evaluate a checkpoint on a test split");
    Common evl_c;
    std::string evl_dataset, evl_checkpoint;
    add_common(evl, evl_c);
    evl->add_option("--dataset", evl_dataset, "dataset file (generated from flags when omitted)");
    evl->add_option("--checkpoint", evl_checkpoint, "checkpoint written by train")->required();
    Binder evl_b(evl);
    add_dataset_flags(evl_b);
    add_circuit_flags(evl_b);

    // sweep
    CLI::App* swp = app.add_subcommand("sweep", "run a variant x noise x classes x preset x seed grid");
    Common swp_c;
    std::vector<std::string> swp_variants{"baseline", "li", "sfa"};
    std::vector<double> swp_noise;
    std::vector<std::uint32_t> swp_classes;
    std::vector<std::string> swp_presets{"medium"};
    std::vector<std::uint64_t> swp_seeds;
    add_common(swp, swp_c, false);
    swp->add_option("--variants", swp_variants, "comma-separated variants")->delimiter(',')->capture_default_str();
    swp->add_option("--noise_intensities", swp_noise, "comma-separated noise levels")->delimiter(',');
    swp->add_option("--classes", swp_classes, "comma-separated class counts")->delimiter(',');
    swp->add_option("--presets", swp_presets, "comma-separated strength presets")->delimiter(',')->capture_default_str();
    swp->add_option("--seeds", swp_seeds, "comma-separated seeds")->delimiter(',');
    Binder swp_b(swp);
    add_dataset_flags(swp_b);
    add_circuit_flags(swp_b);
    add_train_flags(swp_b);

    // report
    CLI::App* rep = app.add_subcommand("report", "summarize a sweep CSV");
    std::string rep_csv, rep_out;
    rep->add_option("csv", rep_csv, "sweep CSV")->required();
    rep->add_option("--out", rep_out, "also write report.json into this directory");

    // Splice config-file entries in front of the user's flags so flags win.
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    try {
        if (!args.empty()) {
            const std::string cfg = config_path_in(args);
            if (!cfg.empty()) {
                const CLI::App* sub = app.get_subcommand_no_throw(args[0]);
                if (sub == nullptr) throw CLI::ExtrasError({args[0]});
                std::vector<std::string> spliced{args[0]};
                for (std::string& t : config_file_tokens(cfg, sub)) spliced.push_back(std::move(t));
                spliced.insert(spliced.end(), args.begin() + 1, args.end());
                args = std::move(spliced);
            }
        }
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    } catch (const ConfigError& e) {
        err << "flysnn: config error: " << e.what() << '\n';
        return kExitConfig;
    }

    try {
        if (*gen) {
            RunSettings s = settings_from(gen_c, gen_b);
            s.data.validate();
            validate(s);
            const Dataset ds = generate_dataset(s.data, s.train.workers);
            const fs::path path = out_dir(gen_c) / "dataset.bin";
            const DatasetManifest m = write_dataset(path, ds);
            out << "wrote " << path.string() << " (" << m.n_train << " train, " << m.n_test << " test, "
                << ds.config.n_classes << " classes)\n";
        } else if (*trn) {
            RunSettings s = settings_from(trn_c, trn_b);
            const Dataset ds = load_or_generate(trn_dataset, s);
            adopt_dataset_config(s, ds);
            validate(s);
            const fs::path dir = out_dir(trn_c);
            std::ofstream log(dir / "train_log.jsonl", std::ios::binary | std::ios::trunc);
            if (!log) throw Error("cannot write " + (dir / "train_log.jsonl").string());
            const auto t0 = std::chrono::steady_clock::now();
            const RunOutcome outcome = run_training(s, ds, [&](const EpochRecord& e) {
                log << to_json(e).dump() << '\n';
                log.flush();
                err << "epoch " << e.epoch << " loss " << e.train_loss << " val " << e.val_acc << " test "
                    << e.test_acc << '\n';
            });
            write_text(dir / "report.json", run_report_json(s, outcome).dump(2) + "\n");
            write_checkpoint(dir / "checkpoint.bin", outcome.resolved.circuit, outcome.result.weights);
            const TrainReport& r = outcome.result.report;
            const double acc = r.test_acc.empty() ? r.initial_test_acc : r.test_acc.back();
            out << "test_acc " << acc << '\n';
            err << "wall " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
                << " s\n";
        } else if (*evl) {
            RunSettings s = settings_from(evl_c, evl_b);
            const Dataset ds = load_or_generate(evl_dataset, s);
            adopt_dataset_config(s, ds);
            validate(s);
            const Checkpoint ck = read_checkpoint(evl_checkpoint);
            const ResolvedCircuit resolved = resolve_circuit(s, ds);
            const std::string expected = hash_hex(config_hash(to_json(resolved.circuit)));
            if (expected != ck.config_hash) {
                throw ConfigError("checkpoint config hash " + ck.config_hash +
                                  " does not match the configuration given (" + expected + ")");
            }
            WeightSet w = build_topology(ck.config);
            w.w_kc_mbon = ck.w_kc_mbon;
            const TrialProtocol protocol;
            const auto up = precompute_upstream(ds.test, w, ck.config, protocol, &ds.config, s.train.workers);
            const double acc = evaluate_accuracy(up, ds.test, w.w_kc_mbon, ck.config, protocol, s.train.workers);
            const nlohmann::json j = {{"accuracy", acc}, {"n_test", ds.test.size()}, {"config_hash", ck.config_hash}};
            if (!evl_c.out_dir.empty()) write_text(out_dir(evl_c) / "eval.json", j.dump(2) + "\n");
            out << j.dump() << '\n';
        } else if (*swp) {
            SweepSpec spec;
            spec.base = settings_from(swp_c, swp_b);
            for (const std::string& v : swp_variants) spec.variants.push_back(parse_variant(v));
            for (const std::string& p : swp_presets) spec.presets.push_back(parse_preset(p));
            spec.noise_intensities =
                swp_noise.empty() ? std::vector<double>{spec.base.data.noise_intensity} : swp_noise;
            spec.class_counts =
                swp_classes.empty() ? std::vector<std::uint32_t>{spec.base.data.n_classes} : swp_classes;
            spec.seeds = swp_seeds.empty() ? std::vector<std::uint64_t>{spec.base.data.seed} : swp_seeds;
            const fs::path csv = out_dir(swp_c) / "sweep.csv";
            const SweepProgress p = run_sweep(spec, csv, spec.base.train.workers, [&](const SweepRow& r) {
                err << r.variant << " sigma=" << r.noise_intensity << " classes=" << r.n_classes
                    << " preset=" << r.preset << " seed=" << r.seed << " acc=" << r.test_acc << " ("
                    << r.status << ", " << r.wall_s << " s)\n";
            });
            out << "cells " << p.total << ", skipped " << p.skipped << ", computed " << p.computed << " -> "
                << csv.string() << '\n';
        } else if (*rep) {
            const SweepReport r = summarize(read_sweep_csv(rep_csv));
            out << render(r);
            if (!rep_out.empty()) {
                fs::create_directories(rep_out);
                write_text(fs::path(rep_out) / "report.json", to_json(r).dump(2) + "\n");
            }
        }
    } catch (const ConfigError& e) {
        err << "flysnn: config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const FormatError& e) {
        err << "flysnn: input error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "flysnn: error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace flysnn

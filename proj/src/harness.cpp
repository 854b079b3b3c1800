#include "flysnn/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include "flysnn/errors.hpp"
#include "flysnn/parallel.hpp"

namespace flysnn {

std::string to_string(Profile p) { return p == Profile::desk ? "desk" : "paper"; }

Profile parse_profile(const std::string& s) {
    if (s == "desk") return Profile::desk;
    if (s == "paper") return Profile::paper;
    throw ConfigError("unknown profile '" + s + "' (expected desk or paper)");
}

void RunSettings::set_seed(std::uint64_t seed) {
    data.seed = seed;
    circuit.seed = seed;
    train.seed = seed;
}

namespace {

constexpr std::uint32_t kDeskMaxClasses = 100;
constexpr std::uint32_t kDeskMaxTrain = 3000;
constexpr std::uint32_t kDeskMaxTest = 1000;

}  // namespace

RunSettings profile_defaults(Profile p) {
    RunSettings s;
    s.profile = p;
    if (p == Profile::desk) {
        s.data.n_classes = kDeskMaxClasses;
        s.data.n_train = kDeskMaxTrain;
        s.data.n_test = kDeskMaxTest;
        s.train.epochs = 30;
        // Operating point for 100 classes: sparse ORN recruitment (about a
        // fifth of KCs active per odor) and mechanism strengths that the
        // calibration grids can still compensate.
        s.circuit.orn_gain = 0.12;
        s.circuit.w_orn_ln = 0.15;
        s.circuit.w0_li = 0.04;
        s.circuit.w0_sfa = 0.02;
    } else {
        s.data.n_classes = 1000;
        s.data.n_train = 30000;
        s.data.n_test = 10000;
        s.train.epochs = 100;
    }
    s.circuit.n_mbon = s.data.n_classes;
    return s;
}

void validate(const RunSettings& s) {
    s.data.validate();
    s.train.validate();
    CircuitConfig c = with_variant(s.circuit, s.variant);
    c.n_mbon = s.data.n_classes;
    c.validate();
    if (s.profile == Profile::desk) {
        if (s.data.n_classes > kDeskMaxClasses) {
            throw ConfigError("desk profile allows at most " + std::to_string(kDeskMaxClasses) +
                              " classes (got " + std::to_string(s.data.n_classes) + "); use --profile paper");
        }
        if (s.data.n_train > kDeskMaxTrain || s.data.n_test > kDeskMaxTest) {
            throw ConfigError("desk profile allows at most " + std::to_string(kDeskMaxTrain) + " train / " +
                              std::to_string(kDeskMaxTest) + " test samples; use --profile paper");
        }
    }
    if (s.li_compensation_gain && !(*s.li_compensation_gain > 0.0)) {
        throw ConfigError("pn_li_compensation_gain must be positive");
    }
    if (s.sfa_bias && !(*s.sfa_bias >= 0.0)) throw ConfigError("pn_ln_sfa_bias must be non-negative");
    if (s.calibration_samples < 1) throw ConfigError("calibration_samples must be at least 1");
}

nlohmann::json identity_json(const RunSettings& s) {
    CircuitConfig c = with_variant(s.circuit, s.variant);
    c.n_mbon = s.data.n_classes;
    nlohmann::json j = {{"variant", to_string(s.variant)},
                        {"data", to_json(s.data)},
                        {"circuit", to_json(c)},
                        {"train", to_json(s.train)},
                        {"calibration_samples", s.calibration_samples}};
    j["circuit"].erase("pn_li_compensation_gain");
    j["circuit"].erase("pn_ln_sfa_bias");
    j["pn_li_compensation_gain"] = s.li_compensation_gain ? nlohmann::json(*s.li_compensation_gain)
                                                          : nlohmann::json("auto");
    j["pn_ln_sfa_bias"] = s.sfa_bias ? nlohmann::json(*s.sfa_bias) : nlohmann::json("auto");
    return j;
}

std::string identity_hash(const RunSettings& s) { return hash_hex(config_hash(identity_json(s))); }

ResolvedCircuit resolve_circuit(const RunSettings& s, const Dataset& dataset) {
    ResolvedCircuit out;
    CircuitConfig& c = out.circuit;
    c = with_variant(s.circuit, s.variant);
    c.n_mbon = dataset.config.n_classes;
    c.n_orn = dataset.config.n_orn;
    c.n_pn = dataset.config.n_orn;
    c.pn_li_compensation_gain = 1.0;
    c.pn_ln_sfa_bias = 0.0;

    const bool need_gain = c.enable_li && !s.li_compensation_gain;
    const bool need_bias = c.enable_sfa && !s.sfa_bias;
    if (c.enable_li && s.li_compensation_gain) c.pn_li_compensation_gain = *s.li_compensation_gain;
    if (c.enable_sfa && s.sfa_bias) c.pn_ln_sfa_bias = *s.sfa_bias;

    if (need_gain || need_bias) {
        if (dataset.train.empty()) throw ConfigError("calibration needs training samples");
        const std::size_t n = std::min<std::size_t>(s.calibration_samples, dataset.train.size());
        std::span<const OdorSample> batch(dataset.train.data(), n);
        // Pinned values are held fixed while the rest is searched.
        CircuitConfig probe = c;
        if (!need_bias) probe.enable_sfa = false;
        Compensation comp = calibrate_compensation(probe, batch, TrialProtocol{}, &dataset.config, need_gain);
        if (need_gain) c.pn_li_compensation_gain = comp.pn_li_compensation_gain;
        if (need_bias) c.pn_ln_sfa_bias = comp.pn_ln_sfa_bias;
        out.compensation = comp;
    }
    out.compensation.pn_li_compensation_gain = c.pn_li_compensation_gain;
    out.compensation.pn_ln_sfa_bias = c.pn_ln_sfa_bias;
    c.validate();
    return out;
}

RunOutcome run_training(const RunSettings& s, const Dataset& dataset, const EpochCallback& on_epoch) {
    validate(s);
    RunOutcome out;
    out.resolved = resolve_circuit(s, dataset);
    out.result = train(dataset, out.resolved.circuit, s.train, TrialProtocol{}, on_epoch);
    return out;
}

nlohmann::json run_report_json(const RunSettings& s, const RunOutcome& outcome) {
    nlohmann::json j;
    j["format"] = "flysnn-train-report";
    j["version"] = 1;
    j["profile"] = to_string(s.profile);
    j["settings_hash"] = identity_hash(s);
    j["settings"] = identity_json(s);
    j["circuit"] = to_json(outcome.resolved.circuit);
    j["circuit_hash"] = hash_hex(config_hash(to_json(outcome.resolved.circuit)));
    j["compensation"] = {{"pn_li_compensation_gain", outcome.resolved.compensation.pn_li_compensation_gain},
                         {"pn_ln_sfa_bias", outcome.resolved.compensation.pn_ln_sfa_bias},
                         {"baseline_pn_rate", outcome.resolved.compensation.baseline_rate},
                         {"achieved_pn_rate", outcome.resolved.compensation.achieved_rate}};
    j["report"] = to_json(outcome.result.report);
    j["final_test_acc"] = outcome.result.report.test_acc.empty() ? outcome.result.report.initial_test_acc
                                                                  : outcome.result.report.test_acc.back();
    return j;
}

// ---- sweeps ---------------------------------------------------------------

void SweepSpec::validate() const {
    if (variants.empty() || noise_intensities.empty() || class_counts.empty() || presets.empty() ||
        seeds.empty()) {
        throw ConfigError("sweep lists must all be non-empty");
    }
    for (const SweepCell& cell : expand(*this)) flysnn::validate(cell.settings);
}

std::vector<SweepCell> expand(const SweepSpec& spec) {
    std::vector<SweepCell> cells;
    for (Variant v : spec.variants) {
        for (double sigma : spec.noise_intensities) {
            for (std::uint32_t classes : spec.class_counts) {
                for (Preset p : spec.presets) {
                    for (std::uint64_t seed : spec.seeds) {
                        SweepCell cell{spec.base, p};
                        RunSettings& s = cell.settings;
                        s.variant = v;
                        s.data.noise_intensity = sigma;
                        s.data.n_classes = classes;
                        s.circuit.n_mbon = classes;
                        s.circuit.li_preset = p;
                        s.circuit.sfa_preset = p;
                        s.set_seed(seed);
                        cells.push_back(std::move(cell));
                    }
                }
            }
        }
    }
    return cells;
}

namespace {

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

std::string sanitize_status(std::string s) {
    for (char& ch : s) {
        if (ch == ',' || ch == '\n' || ch == '\r' || ch == '"') ch = ' ';
    }
    return s;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

template <typename T>
T parse_number(const std::string& field, const char* column, std::size_t line) {
    std::istringstream is(field);
    T value{};
    is >> value;
    if (field.empty() || is.fail() || !is.eof()) {
        throw FormatError("row " + std::to_string(line) + ": column '" + column + "' is not a number: '" +
                          field + "'");
    }
    return value;
}

SweepRow row_skeleton(const SweepCell& cell) {
    const RunSettings& s = cell.settings;
    SweepRow row;
    row.variant = to_string(s.variant);
    row.noise_kind = to_string(s.data.noise_kind);
    row.noise_intensity = s.data.noise_intensity;
    row.n_classes = s.data.n_classes;
    row.preset = to_string(cell.preset);
    row.seed = s.data.seed;
    row.config_hash = identity_hash(s);
    return row;
}

}  // namespace

std::string format_row(const SweepRow& r) {
    std::ostringstream os;
    os << r.variant << ',' << r.noise_kind << ',' << fmt("%.6g", r.noise_intensity) << ',' << r.n_classes << ','
       << r.preset << ',' << r.seed << ',' << fmt("%.6f", r.test_acc) << ','
       << (r.convergence_epoch ? std::to_string(*r.convergence_epoch) : std::string()) << ','
       << fmt("%.8f", r.acc_gain_per_epoch) << ',' << fmt("%.6f", r.kc_coding_level) << ','
       << fmt("%.3f", r.wall_s) << ',' << sanitize_status(r.status) << ',' << r.config_hash;
    return os.str();
}

std::vector<SweepRow> read_sweep_csv(std::istream& in, bool allow_partial_tail) {
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<std::string> lines;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) {
            if (!allow_partial_tail) lines.push_back(text.substr(pos));
            break;
        }
        lines.push_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }
    std::vector<SweepRow> rows;
    bool header_seen = false;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string line = lines[i];
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::size_t lineno = i + 1;
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            if (line != kSweepCsvHeader) throw FormatError("row " + std::to_string(lineno) + ": unexpected header");
            header_seen = true;
            continue;
        }
        const std::vector<std::string> f = split_csv_line(line);
        if (f.size() != 13) {
            throw FormatError("row " + std::to_string(lineno) + ": expected 13 columns, found " +
                              std::to_string(f.size()));
        }
        SweepRow r;
        r.variant = f[0];
        try {
            parse_variant(r.variant);
            parse_noise_kind(f[1]);
            parse_preset(f[4]);
        } catch (const ConfigError& e) {
            throw FormatError("row " + std::to_string(lineno) + ": " + e.what());
        }
        r.noise_kind = f[1];
        r.noise_intensity = parse_number<double>(f[2], "noise_intensity", lineno);
        r.n_classes = parse_number<std::uint32_t>(f[3], "n_classes", lineno);
        r.preset = f[4];
        r.seed = parse_number<std::uint64_t>(f[5], "seed", lineno);
        r.test_acc = parse_number<double>(f[6], "test_acc", lineno);
        if (!f[7].empty()) r.convergence_epoch = parse_number<std::uint32_t>(f[7], "convergence_epoch", lineno);
        r.acc_gain_per_epoch = parse_number<double>(f[8], "acc_gain_per_epoch", lineno);
        r.kc_coding_level = parse_number<double>(f[9], "kc_coding_level", lineno);
        r.wall_s = parse_number<double>(f[10], "wall_s", lineno);
        r.status = f[11];
        r.config_hash = f[12];
        if (r.status.empty()) throw FormatError("row " + std::to_string(lineno) + ": empty status");
        rows.push_back(std::move(r));
    }
    if (!header_seen) throw FormatError("row 1: missing header");
    return rows;
}

std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path, bool allow_partial_tail) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return read_sweep_csv(in, allow_partial_tail);
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot write " + tmp.string());
        out << kSweepCsvVersionLine << '\n' << kSweepCsvHeader << '\n';
        for (const SweepRow& r : rows) out << format_row(r) << '\n';
        if (!out) throw FormatError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

SweepRow run_cell(const SweepCell& cell, unsigned workers) {
    SweepRow row = row_skeleton(cell);
    const auto t0 = std::chrono::steady_clock::now();
    try {
        RunSettings s = cell.settings;
        s.train.workers = workers;
        validate(s);
        const Dataset ds = generate_dataset(s.data, workers);
        const RunOutcome out = run_training(s, ds);
        const TrainReport& rep = out.result.report;
        row.test_acc = rep.test_acc.empty() ? rep.initial_test_acc : rep.test_acc.back();
        row.convergence_epoch = rep.convergence_epoch;
        row.acc_gain_per_epoch = rep.accuracy_gain_per_epoch;
        row.kc_coding_level = rep.kc_coding_level;
        row.status = "ok";
    } catch (const std::exception& e) {
        row.status = std::string("failed: ") + e.what();
    }
    row.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return row;
}

SweepProgress run_sweep(const SweepSpec& spec, const std::filesystem::path& csv, unsigned workers,
                        const CellCallback& on_cell) {
    spec.validate();
    const std::vector<SweepCell> cells = expand(spec);
    std::map<std::string, SweepRow> done;
    if (std::filesystem::exists(csv)) {
        for (SweepRow& r : read_sweep_csv(csv, true)) {
            if (r.ok()) done[r.config_hash] = std::move(r);
        }
    }

    std::vector<std::size_t> todo;
    std::vector<std::string> hashes(cells.size());
    std::set<std::string> queued;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        hashes[i] = identity_hash(cells[i].settings);
        if (!done.count(hashes[i]) && queued.insert(hashes[i]).second) todo.push_back(i);
    }

    SweepProgress progress{cells.size(), cells.size() - todo.size(), 0};
    workers = std::max(1u, workers);
    const unsigned outer = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(1, todo.size())));
    const unsigned inner = std::max(1u, workers / outer);

    // Rows are appended as cells finish so an interrupted sweep can resume.
    std::mutex writer;
    {
        const bool fresh = !std::filesystem::exists(csv) || std::filesystem::file_size(csv) == 0;
        if (fresh) write_sweep_csv(csv, {});
    }
    std::map<std::string, SweepRow> fresh_rows;
    parallel_for(todo.size(), outer, [&](std::size_t k) {
        const SweepCell& cell = cells[todo[k]];
        SweepRow row = run_cell(cell, inner);
        std::lock_guard lock(writer);
        {
            // An interrupted writer may have left an unterminated line behind.
            std::ifstream probe(csv, std::ios::binary | std::ios::ate);
            bool needs_newline = false;
            if (probe && probe.tellg() > 0) {
                probe.seekg(-1, std::ios::end);
                needs_newline = probe.get() != '\n';
            }
            std::ofstream out(csv, std::ios::binary | std::ios::app);
            if (needs_newline) out << '\n';
            out << format_row(row) << '\n';
        }
        ++progress.computed;
        if (on_cell) on_cell(row);
        fresh_rows[row.config_hash] = std::move(row);
    });

    std::vector<SweepRow> ordered;
    ordered.reserve(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (auto it = fresh_rows.find(hashes[i]); it != fresh_rows.end()) {
            ordered.push_back(it->second);
        } else if (auto d = done.find(hashes[i]); d != done.end()) {
            ordered.push_back(d->second);
        }
    }
    write_sweep_csv(csv, ordered);
    return progress;
}

// ---- report ---------------------------------------------------------------

namespace {

const std::vector<std::string>& variant_order() {
    static const std::vector<std::string> order = {"baseline", "li", "sfa", "full"};
    return order;
}

}  // namespace

SweepReport summarize(const std::vector<SweepRow>& rows) {
    SweepReport rep;
    using Key = std::tuple<std::string, double, std::uint32_t, std::string>;
    std::map<Key, std::map<std::string, std::vector<double>>> groups;
    std::map<std::string, std::vector<const SweepRow*>> by_variant;
    for (const SweepRow& r : rows) {
        if (!r.ok()) {
            ++rep.failed_rows;
            continue;
        }
        groups[{r.noise_kind, r.noise_intensity, r.n_classes, r.preset}][r.variant].push_back(r.test_acc);
        by_variant[r.variant].push_back(&r);
    }

    for (const auto& [key, variants] : groups) {
        ReportGroup g;
        std::tie(g.noise_kind, g.noise_intensity, g.n_classes, g.preset) = key;
        std::optional<double> base;
        if (auto it = variants.find("baseline"); it != variants.end()) {
            double sum = 0.0;
            for (double a : it->second) sum += a;
            base = sum / static_cast<double>(it->second.size());
        }
        double best = -1.0;
        for (const std::string& name : variant_order()) {
            auto it = variants.find(name);
            if (it == variants.end()) continue;
            VariantMean m;
            m.variant = name;
            m.n = it->second.size();
            double sum = 0.0;
            for (double a : it->second) sum += a;
            m.mean_acc = sum / static_cast<double>(m.n);
            if (base && name != "baseline") m.delta_vs_baseline = m.mean_acc - *base;
            if (m.mean_acc > best) {
                best = m.mean_acc;
                g.best_variant = name;
            }
            g.variants.push_back(m);
        }
        rep.groups.push_back(std::move(g));
    }

    for (const std::string& name : variant_order()) {
        auto it = by_variant.find(name);
        if (it == by_variant.end()) continue;
        ConvergenceSummary c;
        c.variant = name;
        c.runs = it->second.size();
        double epochs = 0.0, gain = 0.0;
        for (const SweepRow* r : it->second) {
            gain += r->acc_gain_per_epoch;
            if (r->convergence_epoch) {
                ++c.converged;
                epochs += *r->convergence_epoch;
            }
        }
        if (c.converged) c.mean_epoch = epochs / static_cast<double>(c.converged);
        c.mean_gain_per_epoch = gain / static_cast<double>(c.runs);
        rep.convergence.push_back(c);
    }
    return rep;
}

nlohmann::json to_json(const SweepReport& r) {
    nlohmann::json groups = nlohmann::json::array();
    for (const ReportGroup& g : r.groups) {
        nlohmann::json vs = nlohmann::json::array();
        for (const VariantMean& m : g.variants) {
            vs.push_back({{"variant", m.variant},
                          {"n", m.n},
                          {"mean_acc", m.mean_acc},
                          {"delta_vs_baseline",
                           m.delta_vs_baseline ? nlohmann::json(*m.delta_vs_baseline) : nlohmann::json(nullptr)}});
        }
        groups.push_back({{"noise_kind", g.noise_kind},
                          {"noise_intensity", g.noise_intensity},
                          {"n_classes", g.n_classes},
                          {"preset", g.preset},
                          {"variants", vs},
                          {"best_variant", g.best_variant}});
    }
    nlohmann::json conv = nlohmann::json::array();
    for (const ConvergenceSummary& c : r.convergence) {
        conv.push_back({{"variant", c.variant},
                        {"runs", c.runs},
                        {"converged", c.converged},
                        {"mean_epoch", c.mean_epoch ? nlohmann::json(*c.mean_epoch) : nlohmann::json(nullptr)},
                        {"mean_gain_per_epoch", c.mean_gain_per_epoch}});
    }
    return {{"groups", groups}, {"convergence", conv}, {"failed_rows", r.failed_rows}};
}

std::string render(const SweepReport& r) {
    std::ostringstream os;
    os << "noise_kind,noise_intensity,n_classes,preset,variant,n,mean_acc,delta_vs_baseline,best\n";
    for (const ReportGroup& g : r.groups) {
        for (const VariantMean& m : g.variants) {
            os << g.noise_kind << ',' << fmt("%.6g", g.noise_intensity) << ',' << g.n_classes << ',' << g.preset
               << ',' << m.variant << ',' << m.n << ',' << fmt("%.4f", m.mean_acc) << ','
               << (m.delta_vs_baseline ? fmt("%+.4f", *m.delta_vs_baseline) : std::string()) << ','
               << (m.variant == g.best_variant ? "*" : "") << '\n';
        }
    }
    os << "\nvariant,runs,converged,mean_convergence_epoch,mean_acc_gain_per_epoch\n";
    for (const ConvergenceSummary& c : r.convergence) {
        os << c.variant << ',' << c.runs << ',' << c.converged << ','
           << (c.mean_epoch ? fmt("%.2f", *c.mean_epoch) : std::string()) << ','
           << fmt("%.6f", c.mean_gain_per_epoch) << '\n';
    }
    if (r.failed_rows) os << "\nfailed rows skipped: " << r.failed_rows << '\n';
    return os.str();
}

}  // namespace flysnn

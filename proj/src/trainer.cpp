#include "flysnn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "flysnn/errors.hpp"
#include "flysnn/parallel.hpp"
#include "flysnn/rng.hpp"

namespace flysnn {

namespace {

// Gradient accumulation is split into fixed-size sample chunks reduced in
// chunk order, so the summation order never depends on the worker count.
constexpr std::size_t kChunk = 16;

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    if (!(l2_lambda >= 0.0)) throw ConfigError("l2_lambda must be >= 0");
    if (!(scheduler_factor > 0.0 && scheduler_factor < 1.0)) {
        throw ConfigError("scheduler_factor must lie in (0, 1)");
    }
    if (scheduler_patience < 1) throw ConfigError("scheduler_patience must be at least 1");
    if (convergence_window < 1) throw ConfigError("convergence_window must be at least 1");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
    surrogate.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"adam_beta1", c.adam_beta1},
            {"adam_beta2", c.adam_beta2},
            {"adam_eps", c.adam_eps},
            {"l2_lambda", c.l2_lambda},
            {"scheduler_factor", c.scheduler_factor},
            {"scheduler_patience", c.scheduler_patience},
            {"convergence_window", c.convergence_window},
            {"convergence_threshold", c.convergence_threshold},
            {"val_fraction", c.val_fraction},
            {"surrogate_k1", c.surrogate.k1},
            {"surrogate_k2", c.surrogate.k2},
            {"seed", c.seed}};
}

SoftmaxXent softmax_xent(std::span<const double> mean_v, std::uint32_t label) {
    if (label >= mean_v.size()) throw ContractError("label out of range for softmax_xent");
    const double m = *std::max_element(mean_v.begin(), mean_v.end());
    SoftmaxXent out;
    out.grad.resize(mean_v.size());
    double z = 0.0;
    for (std::size_t j = 0; j < mean_v.size(); ++j) {
        out.grad[j] = std::exp(mean_v[j] - m);
        z += out.grad[j];
    }
    for (double& p : out.grad) p /= z;
    out.loss = std::log(z) - (mean_v[label] - m);
    out.grad[label] -= 1.0;
    return out;
}

void backward_kc_mbon(const MbonTrace& trace, const SpikeRaster& kc_spikes, std::span<const double> grad_mean_v,
                      const TrialProtocol& protocol, const CircuitConfig& config, const SurrogateParams& surrogate,
                      Matrix& grad, double scale) {
    const std::uint32_t n_mbon = trace.n_mbon;
    if (trace.u.size() != std::size_t(trace.n_steps) * n_mbon || trace.n_steps < protocol.eval_end()) {
        throw ContractError("MBON trace does not cover the trial");
    }
    if (kc_spikes.n_steps() != trace.n_steps) throw ContractError("KC raster length differs from MBON trace");
    if (grad_mean_v.size() != n_mbon) throw ContractError("gradient length differs from MBON count");
    if (grad.rows != n_mbon || grad.cols != kc_spikes.n_cols()) throw ContractError("gradient matrix shape mismatch");

    const double beta = std::exp(-config.dt / config.tau_m);
    const double v_th = config.v_th_mbon;
    const std::uint32_t t0 = protocol.eval_start(), t1 = protocol.eval_end();
    const double direct_scale = 1.0 / static_cast<double>(t1 - t0);

    // carry[j] = dL/du[t+1] for the step after the current one.
    std::vector<double> carry(n_mbon, 0.0);
    for (std::uint32_t t = t1; t-- > 0;) {
        const bool in_window = t >= t0;
        const auto active = kc_spikes.active(t);
        for (std::uint32_t j = 0; j < n_mbon; ++j) {
            const double dv = (in_window ? grad_mean_v[j] * direct_scale : 0.0) + beta * carry[j];
            const double du = dv * (1.0 - v_th * surrogate_grad(trace.u_at(t, j) - v_th, surrogate));
            carry[j] = du;
            if (du == 0.0) continue;
            double* g = grad.row(j);
            const double d = scale * du;
            for (std::uint32_t k : active) g[k] += d;
        }
    }
}

Matrix backward_kc_mbon(const TrialRecording& rec, std::span<const double> grad_mean_v, const CircuitConfig& config,
                        const SurrogateParams& surrogate) {
    Matrix g(rec.mbon.n_mbon, rec.kc_spikes.n_cols());
    backward_kc_mbon(rec.mbon, rec.kc_spikes, grad_mean_v, rec.protocol, config, surrogate, g, 1.0);
    return g;
}

void adam_step(Matrix& weights, const Matrix& grad, AdamState& state, const TrainConfig& config, double lr) {
    if (grad.rows != weights.rows || grad.cols != weights.cols || state.m.rows != weights.rows ||
        state.m.cols != weights.cols) {
        throw ContractError("adam_step shape mismatch");
    }
    ++state.step;
    const double b1 = config.adam_beta1, b2 = config.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    const double step_size = lr / c1;
    const double sqrt_c2 = std::sqrt(c2);
    for (std::size_t i = 0; i < weights.data.size(); ++i) {
        const double g = grad.data[i] + config.l2_lambda * weights.data[i];
        double& m = state.m.data[i];
        double& v = state.v.data[i];
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        weights.data[i] -= step_size * m / (std::sqrt(v) / sqrt_c2 + config.adam_eps);
    }
}

double PlateauScheduler::step(double metric, double lr) {
    if (!has_best_ || metric > best_) {
        has_best_ = true;
        best_ = metric;
        bad_epochs_ = 0;
        return lr;
    }
    if (++bad_epochs_ >= patience_) {
        bad_epochs_ = 0;
        return lr * factor_;
    }
    return lr;
}

double lr_plateau(std::span<const double> history, double current_lr, const TrainConfig& config) {
    if (history.empty()) throw ContractError("lr_plateau needs a non-empty history");
    PlateauScheduler s(config);
    bool reduced_last = false;
    for (double metric : history) reduced_last = s.step(metric, 1.0) != 1.0;
    return reduced_last ? current_lr * config.scheduler_factor : current_lr;
}

std::optional<std::uint32_t> convergence_epoch(std::span<const double> series, const TrainConfig& config) {
    const std::size_t n = config.convergence_window;
    if (series.size() < n + 1) {
        throw ContractError("accuracy series has " + std::to_string(series.size()) + " epochs, need at least " +
                            std::to_string(n + 1));
    }
    for (std::size_t e = n; e < series.size(); ++e) {
        double gain = 0.0;
        for (std::size_t i = 1; i <= n; ++i) gain += series[e - i + 1] - series[e - i];
        if (gain / static_cast<double>(n) < config.convergence_threshold) return static_cast<std::uint32_t>(e + 1);
    }
    return std::nullopt;
}

double accuracy_gain_per_epoch(double initial_accuracy, std::span<const double> series,
                               std::optional<std::uint32_t> convergence) {
    if (series.empty()) return 0.0;
    const std::uint32_t e = convergence.value_or(static_cast<std::uint32_t>(series.size()));
    return (series[e - 1] - initial_accuracy) / static_cast<double>(e);
}

nlohmann::json to_json(const EpochRecord& e) {
    return {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_acc", e.val_acc}, {"test_acc", e.test_acc},
            {"lr", e.lr}};
}

nlohmann::json to_json(const TrainReport& r) {
    nlohmann::json j = {{"train_loss", r.train_loss},
                        {"val_acc", r.val_acc},
                        {"test_acc", r.test_acc},
                        {"lr", r.lr},
                        {"initial_val_acc", r.initial_val_acc},
                        {"initial_test_acc", r.initial_test_acc},
                        {"accuracy_gain_per_epoch", r.accuracy_gain_per_epoch},
                        {"kc_coding_level", r.kc_coding_level}};
    j["convergence_epoch"] = r.convergence_epoch ? nlohmann::json(*r.convergence_epoch) : nlohmann::json(nullptr);
    return j;
}

std::vector<UpstreamActivity> precompute_upstream(std::span<const OdorSample> samples, const WeightSet& weights,
                                                  const CircuitConfig& config, const TrialProtocol& protocol,
                                                  const DatasetConfig* noise, unsigned workers) {
    std::vector<UpstreamActivity> out(samples.size());
    parallel_for(samples.size(), workers, [&](std::size_t i) {
        out[i] = simulate_upstream(samples[i], weights, config, protocol, noise);
    });
    return out;
}

std::uint32_t predict(const MbonTrace& trace, const TrialProtocol& protocol) {
    const std::vector<double> mean = mean_mbon_potential(trace, protocol);
    return static_cast<std::uint32_t>(std::max_element(mean.begin(), mean.end()) - mean.begin());
}

namespace {

double accuracy_of(std::span<const std::size_t> rows, std::span<const UpstreamActivity> activity,
                   std::span<const OdorSample> samples, const Matrix& w, const CircuitConfig& config,
                   const TrialProtocol& protocol, unsigned workers) {
    if (rows.empty()) return 0.0;
    std::vector<std::uint8_t> correct(rows.size(), 0);
    parallel_for(rows.size(), workers, [&](std::size_t i) {
        const std::size_t r = rows[i];
        const MbonTrace tr = simulate_mbon(activity[r].kc_spikes, w, config);
        correct[i] = predict(tr, protocol) == samples[r].class_id ? 1 : 0;
    });
    const std::size_t hits = std::accumulate(correct.begin(), correct.end(), std::size_t{0});
    return static_cast<double>(hits) / static_cast<double>(rows.size());
}

}  // namespace

double evaluate_accuracy(std::span<const UpstreamActivity> activity, std::span<const OdorSample> samples,
                         const Matrix& w_kc_mbon, const CircuitConfig& config, const TrialProtocol& protocol,
                         unsigned workers) {
    if (activity.size() != samples.size()) throw ContractError("activity and sample counts differ");
    std::vector<std::size_t> rows(samples.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return accuracy_of(rows, activity, samples, w_kc_mbon, config, protocol, workers);
}

TrainResult train(const Dataset& dataset, const CircuitConfig& circuit, const TrainConfig& config,
                  const TrialProtocol& protocol, const EpochCallback& on_epoch) {
    config.validate();
    circuit.validate();
    protocol.validate();
    dataset.config.validate();
    if (circuit.n_mbon != dataset.config.n_classes) {
        throw ConfigError("circuit has " + std::to_string(circuit.n_mbon) + " MBONs but the dataset has " +
                          std::to_string(dataset.config.n_classes) + " classes");
    }
    if (circuit.n_orn != dataset.config.n_orn) throw ConfigError("circuit n_orn differs from dataset n_orn");
    const DatasetConfig* noise = &dataset.config;
    const unsigned workers = std::max(1u, config.workers);

    TrainResult result;
    result.weights = build_topology(circuit);
    Matrix& w = result.weights.w_kc_mbon;

    const std::vector<UpstreamActivity> train_up =
        precompute_upstream(dataset.train, result.weights, circuit, protocol, noise, workers);
    const std::vector<UpstreamActivity> test_up =
        precompute_upstream(dataset.test, result.weights, circuit, protocol, noise, workers);

    const rng::Key key = rng::key_from_seed(config.seed);
    const std::size_t n_train = dataset.train.size();
    std::vector<std::uint32_t> perm(n_train);
    std::iota(perm.begin(), perm.end(), 0u);
    {
        rng::CounterStream split_stream(key, 0, 0, rng::Domain::val_split);
        rng::shuffle(perm, split_stream);
    }
    const auto n_val = static_cast<std::size_t>(
        std::max<double>(1.0, std::round(config.val_fraction * static_cast<double>(n_train))));
    if (n_val >= n_train) throw ConfigError("training split too small to carve a validation set");
    std::vector<std::size_t> val_rows(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::uint32_t> fit_rows(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
    std::sort(val_rows.begin(), val_rows.end());
    std::sort(fit_rows.begin(), fit_rows.end());
    std::vector<std::size_t> test_rows(dataset.test.size());
    std::iota(test_rows.begin(), test_rows.end(), std::size_t{0});

    auto val_accuracy = [&] {
        return accuracy_of(val_rows, train_up, dataset.train, w, circuit, protocol, workers);
    };
    auto test_accuracy = [&] {
        return accuracy_of(test_rows, test_up, dataset.test, w, circuit, protocol, workers);
    };

    TrainReport& report = result.report;
    report.initial_val_acc = val_accuracy();
    report.initial_test_acc = test_accuracy();
    double coding = 0.0;
    for (const auto& u : test_up) coding += u.kc_coding_level;
    report.kc_coding_level = coding / static_cast<double>(test_up.size());

    AdamState adam(w.rows, w.cols);
    PlateauScheduler scheduler(config);
    double lr = config.lr;

    const std::size_t max_chunks = (config.batch_size + kChunk - 1) / kChunk;
    std::vector<Matrix> chunk_grad(max_chunks, Matrix(w.rows, w.cols));
    std::vector<double> chunk_loss(max_chunks, 0.0);
    Matrix grad(w.rows, w.cols);

    for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<std::uint32_t> order = fit_rows;
        rng::CounterStream shuffle_stream(key, epoch, 0, rng::Domain::epoch_shuffle);
        rng::shuffle(order, shuffle_stream);

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            const std::size_t batch = end - start;
            const std::size_t n_chunks = (batch + kChunk - 1) / kChunk;
            const double inv_batch = 1.0 / static_cast<double>(batch);

            parallel_for(n_chunks, workers, [&](std::size_t c) {
                Matrix& g = chunk_grad[c];
                std::fill(g.data.begin(), g.data.end(), 0.0);
                double loss_sum = 0.0;
                const std::size_t lo = start + c * kChunk, hi = std::min(end, lo + kChunk);
                for (std::size_t i = lo; i < hi; ++i) {
                    const std::uint32_t r = order[i];
                    const MbonTrace tr = simulate_mbon(train_up[r].kc_spikes, w, circuit);
                    const std::vector<double> mean = mean_mbon_potential(tr, protocol);
                    const SoftmaxXent xe = softmax_xent(mean, dataset.train[r].class_id);
                    if (!std::isfinite(xe.loss)) {
                        throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", sample " +
                                           std::to_string(dataset.train[r].sample_index));
                    }
                    loss_sum += xe.loss;
                    backward_kc_mbon(tr, train_up[r].kc_spikes, xe.grad, protocol, circuit, config.surrogate, g,
                                     inv_batch);
                }
                chunk_loss[c] = loss_sum;
            });

            std::fill(grad.data.begin(), grad.data.end(), 0.0);
            for (std::size_t c = 0; c < n_chunks; ++c) {
                const Matrix& g = chunk_grad[c];
                for (std::size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += g.data[i];
                epoch_loss += chunk_loss[c];
            }
            adam_step(w, grad, adam, config, lr);
        }

        report.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));
        report.val_acc.push_back(val_accuracy());
        report.test_acc.push_back(test_accuracy());
        report.lr.push_back(lr);
        if (on_epoch) on_epoch(report.record(epoch));
        lr = scheduler.step(report.val_acc.back(), lr);
    }

    if (report.test_acc.size() > config.convergence_window) {
        report.convergence_epoch = convergence_epoch(report.test_acc, config);
    }
    report.accuracy_gain_per_epoch =
        accuracy_gain_per_epoch(report.initial_test_acc, report.test_acc, report.convergence_epoch);
    return result;
}

}  // namespace flysnn

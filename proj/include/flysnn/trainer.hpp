#pragma once

// Readout training: softmax cross-entropy on the time-averaged MBON
// potential, exact reverse sweep through the MBON recurrence with a
// surrogate for the spike nonlinearity, Adam with coupled L2 decay and a
// plateau learning-rate schedule.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "flysnn/circuit.hpp"
#include "flysnn/dynamics.hpp"
#include "flysnn/odor_data.hpp"
#include "flysnn/simulator.hpp"
#include "json.hpp"

namespace flysnn {

struct TrainConfig {
    std::uint32_t epochs = 100;
    std::uint32_t batch_size = 256;
    double lr = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double l2_lambda = 1e-5;
    double scheduler_factor = 0.2;
    std::uint32_t scheduler_patience = 10;
    std::uint32_t convergence_window = 10;
    double convergence_threshold = 0.003;
    double val_fraction = 0.1;
    SurrogateParams surrogate;
    std::uint64_t seed = 1;
    unsigned workers = 1;  // does not influence results

    void validate() const;
};

// Result-relevant fields only (workers excluded).
nlohmann::json to_json(const TrainConfig& c);

struct SoftmaxXent {
    double loss = 0.0;
    std::vector<double> grad;  // d loss / d mean_v
};

SoftmaxXent softmax_xent(std::span<const double> mean_v, std::uint32_t label);

// Accumulates scale * dLoss/dW into grad ([n_mbon x n_kc]). The trace must
// cover the whole trial: grad_mean_v is spread evenly over the readout
// window and then carried backwards through every earlier step.
void backward_kc_mbon(const MbonTrace& trace, const SpikeRaster& kc_spikes,
                      std::span<const double> grad_mean_v, const TrialProtocol& protocol,
                      const CircuitConfig& config, const SurrogateParams& surrogate, Matrix& grad,
                      double scale = 1.0);

Matrix backward_kc_mbon(const TrialRecording& rec, std::span<const double> grad_mean_v,
                        const CircuitConfig& config, const SurrogateParams& surrogate);

struct AdamState {
    Matrix m;
    Matrix v;
    std::uint64_t step = 0;

    AdamState() = default;
    AdamState(std::size_t rows, std::size_t cols) : m(rows, cols), v(rows, cols) {}
};

// Coupled L2: the decay term lambda*W is added to the gradient before the
// moment updates.
void adam_step(Matrix& weights, const Matrix& grad, AdamState& state, const TrainConfig& config,
               double lr);

// Reduces the learning rate when validation accuracy has not set a new best
// for `patience` consecutive epochs; the bad-epoch counter restarts after
// each reduction.
class PlateauScheduler {
public:
    explicit PlateauScheduler(const TrainConfig& config)
        : factor_(config.scheduler_factor), patience_(config.scheduler_patience) {}

    // Feeds one epoch's metric; returns the learning rate to use next.
    double step(double metric, double lr);

private:
    double factor_;
    std::uint32_t patience_;
    bool has_best_ = false;
    double best_ = 0.0;
    std::uint32_t bad_epochs_ = 0;
};

// Replays `history` through a fresh scheduler and applies the decision made
// at its last entry to current_lr.
double lr_plateau(std::span<const double> history, double current_lr, const TrainConfig& config);

// 1-based epoch e at which the mean accuracy gain over the trailing
// `convergence_window` epochs first drops below the threshold, or none.
// series[0] is the accuracy after epoch 1. Throws ContractError when the
// series is shorter than window + 1.
std::optional<std::uint32_t> convergence_epoch(std::span<const double> series, const TrainConfig& config);

// (acc at convergence - acc before training) / convergence epoch. Uses the
// last epoch when training never converged.
double accuracy_gain_per_epoch(double initial_accuracy, std::span<const double> series,
                               std::optional<std::uint32_t> convergence);

struct EpochRecord {
    std::uint32_t epoch = 0;
    double train_loss = 0.0;
    double val_acc = 0.0;
    double test_acc = 0.0;
    double lr = 0.0;
};

struct TrainReport {
    std::vector<double> train_loss;
    std::vector<double> val_acc;
    std::vector<double> test_acc;
    std::vector<double> lr;
    double initial_val_acc = 0.0;
    double initial_test_acc = 0.0;
    std::optional<std::uint32_t> convergence_epoch;
    double accuracy_gain_per_epoch = 0.0;
    double kc_coding_level = 0.0;  // mean over the test split

    EpochRecord record(std::size_t i) const {
        return {static_cast<std::uint32_t>(i + 1), train_loss[i], val_acc[i], test_acc[i], lr[i]};
    }
};

nlohmann::json to_json(const TrainReport& r);
nlohmann::json to_json(const EpochRecord& e);

struct TrainResult {
    TrainReport report;
    WeightSet weights;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Upstream activity for each sample (independent of the learnable weights).
std::vector<UpstreamActivity> precompute_upstream(std::span<const OdorSample> samples,
                                                  const WeightSet& weights, const CircuitConfig& config,
                                                  const TrialProtocol& protocol, const DatasetConfig* noise,
                                                  unsigned workers);

// Fraction of samples whose argmax mean MBON potential equals the label.
double evaluate_accuracy(std::span<const UpstreamActivity> activity, std::span<const OdorSample> samples,
                         const Matrix& w_kc_mbon, const CircuitConfig& config, const TrialProtocol& protocol,
                         unsigned workers);

std::uint32_t predict(const MbonTrace& trace, const TrialProtocol& protocol);

TrainResult train(const Dataset& dataset, const CircuitConfig& circuit, const TrainConfig& config,
                  const TrialProtocol& protocol = {}, const EpochCallback& on_epoch = {});

}  // namespace flysnn

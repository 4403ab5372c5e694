#ifndef GATENAS_SEARCH_HPP
#define GATENAS_SEARCH_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gatenas/cost.hpp"
#include "gatenas/data.hpp"
#include "gatenas/gates.hpp"
#include "gatenas/objective.hpp"
#include "gatenas/optimizer.hpp"
#include "gatenas/spaces.hpp"

namespace gatenas {

enum class ExportMode { kExpected, kHardSample };

struct SearchConfig {
    double lambda = 0.0;
    double tau = kDefaultTemperature;
    double logit_init = kDefaultLogitInit;
    PenaltyMode penalty = PenaltyMode::kExpected;
    ExportMode export_mode = ExportMode::kExpected;
    int search_epochs = 10;
    int retrain_epochs = 10;
    int batch_size = 64;
    double learning_rate = 0.1;
    double lr_decay = 1.0;
    double lr_decay_epochs = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1.0;
    double weight_decay = 1.7e-5;
    double bn_momentum = 0.99;
    std::uint64_t seed = 0;
    Metric metric = Metric::kParams;
    bool count_aux_params = false;
};

AdamConfig adam_config(const SearchConfig& cfg);
CostOptions cost_options(const SearchConfig& cfg);

struct EpochRecord {
    int epoch = 0;
    double task_loss = 0.0;
    // Penalised part of the expected cost, and with the fixed part added.
    double expected_cost = 0.0;
    double total_cost = 0.0;
    double pi_mean = 0.0;
    // Fraction of gates with pi below 0.01 or above 0.99.
    double pi_saturated = 0.0;
    double eval_accuracy = 0.0;
    double learning_rate = 0.0;
};

nlohmann::json epoch_to_json(const EpochRecord& rec);

struct RunHistory {
    std::vector<EpochRecord> epochs;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

struct LearnedState {
    NetworkGraph graph;
    GateSet gates;
    OptimizerState optimizer;
    RunHistory history;
};

// Joint training of weights and gate logits on L_t + lambda * cost.
LearnedState architecture_learn(const PreparedSpace& ps, const CostModel& cost, const Dataset& data,
                                const SearchConfig& cfg, const EpochCallback& on_epoch = {});

// lambda * E[cost] / L_t on the first training batch at initialisation.
double initial_penalty_ratio(const PreparedSpace& ps, const CostModel& cost, const Dataset& data,
                             const SearchConfig& cfg);

struct ExportResult {
    Architecture arch;
    std::vector<std::string> warnings;
};

// Per layer floor(sum pi) (always-on channels count 1); operators with a
// zero-width layer are absent; mandatory layers clamp to 1; a block left with
// no operator and no bypass revives its operator with the largest sum pi.
ExportResult export_architecture(const PreparedSpace& ps, std::span<const double> pi);

// Hard-sample export: draw m ~ Bern(pi) and export the binary vector.
std::vector<double> sample_hard_masks(std::span<const double> pi, Rng& rng);

struct TrainResult {
    double best_accuracy = 0.0;
    double final_accuracy = 0.0;
    double final_loss = 0.0;
    RunHistory history;
    // Trained network after the last epoch.
    NetworkGraph model;
};

// Fresh initialisation, task loss only. Points report final_accuracy.
TrainResult retrain(const NetworkGraph& graph, const Dataset& data, const SearchConfig& cfg,
                    const EpochCallback& on_epoch = {});

// Accuracy of a plain graph on the eval split.
double evaluate_accuracy(const NetworkGraph& graph, const Dataset& data, std::span<const double> masks = {});

struct SearchOutcome {
    LearnedState learned;
    ExportResult exported;
    NetworkGraph materialized;
    double cost = 0.0;
    TrainResult retrained;
};

SearchOutcome run_search(const PreparedSpace& ps, const Dataset& data, const SearchConfig& cfg,
                         const EpochCallback& on_epoch = {});

struct ArchitecturePoint {
    std::string method;
    Architecture arch;
    double cost = 0.0;
    double accuracy = 0.0;
    std::uint64_t seed = 0;
    double lambda = 0.0;
};

std::vector<ArchitecturePoint> random_search(const PreparedSpace& ps, int samples, const Dataset& data,
                                             const SearchConfig& cfg);

ArchitecturePoint width_multiplier_baseline(const PreparedSpace& ps, double alpha, const Dataset& data,
                                            const SearchConfig& cfg);

struct L1Result {
    std::vector<double> gates;
    ExportResult exported;
    RunHistory history;
};

// Deterministic multiplicative gates starting at 1 with penalty
// lambda * sum_i w_i |g_i|, w_i the marginal cost of group i at full width,
// applied as a soft-threshold after each ADAM step on the task gradient.
// Channels with |g| > 1e-2 survive export.
L1Result l1_baseline(const PreparedSpace& ps, const CostModel& cost, const Dataset& data, const SearchConfig& cfg);

struct SweepJob {
    double lambda = 0.0;
    std::uint64_t seed = 0;
    int search_epochs = 0;
};

using SweepCallback = std::function<void(std::size_t job, const SearchOutcome&)>;

// Runs every job (search, export, materialize, retrain) on up to `jobs`
// threads; results come back in job order. `on_done` runs on the worker
// thread that finished the job.
std::vector<ArchitecturePoint> pareto_sweep(const PreparedSpace& ps, const Dataset& data, const SearchConfig& cfg,
                                            std::span<const SweepJob> sweep, int jobs = 1,
                                            const SweepCallback& on_done = {});

} // namespace gatenas

#endif // GATENAS_SEARCH_HPP

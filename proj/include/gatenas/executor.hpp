#ifndef GATENAS_EXECUTOR_HPP
#define GATENAS_EXECUTOR_HPP

#include <span>
#include <vector>

#include "gatenas/graph.hpp"
#include "gatenas/tensor.hpp"

namespace gatenas {

enum class Mode { kTrain, kEval };

inline constexpr double kBatchNormEpsilon = 1e-5;

// Gradients for one backward pass. `params[node][k]` matches
// `graph.node(node).params[k]`; `masks[g]` is dL/d(mask value of group g),
// summed over every mask channel bound to g.
struct Gradients {
    std::vector<std::vector<std::vector<double>>> params;
    std::vector<double> masks;
};

// Evaluates a graph on a batch and back-propagates the task loss. The graph is
// read-only here: batchnorm running statistics are folded in separately by
// update_running_stats, so several executors may share one graph for
// evaluation.
class Executor {
public:
    explicit Executor(const NetworkGraph& graph);

    // `inputs` is (N, C, H, W) with C the input node's source channel count.
    // `mask_values[g]` is the multiplier for group g; it must cover every
    // group id that appears on a mask node. Returns the mean cross-entropy
    // when labels are given (NaN otherwise).
    double forward(const Tensor& inputs, std::span<const int> labels, Mode mode,
                   std::span<const double> mask_values = {});

    // Requires a preceding train-mode forward with labels.
    [[nodiscard]] Gradients backward() const;

    [[nodiscard]] const Tensor& activation(NodeId id) const;
    [[nodiscard]] const Tensor& output() const;
    [[nodiscard]] std::vector<int> predictions() const;
    [[nodiscard]] double loss() const { return loss_; }

    // Exponential moving average of the last train-mode batch statistics:
    // running = momentum * running + (1 - momentum) * batch.
    void update_running_stats(NetworkGraph& graph, double momentum) const;

private:
    struct NormCache {
        std::vector<double> mean;
        std::vector<double> inv_std;
        std::vector<double> var;
    };

    const NetworkGraph* graph_;
    std::vector<Tensor> acts_;
    std::vector<NormCache> norms_;
    std::vector<std::vector<double>> mask_scale_;
    std::vector<double> probs_;
    std::vector<int> labels_;
    std::size_t mask_group_count_ = 0;
    double loss_ = 0.0;
    bool ready_ = false;
    Mode mode_ = Mode::kEval;
};

double accuracy(std::span<const int> predicted, std::span<const int> labels);

} // namespace gatenas

#endif // GATENAS_EXECUTOR_HPP

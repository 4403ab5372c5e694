#ifndef GATENAS_OBJECTIVE_HPP
#define GATENAS_OBJECTIVE_HPP

#include <span>
#include <vector>

#include "gatenas/cost.hpp"
#include "gatenas/executor.hpp"
#include "gatenas/gates.hpp"
#include "gatenas/graph.hpp"

namespace gatenas {

enum class PenaltyMode { kExpected, kSampled };

// L_t(w * m(nu, ell)) + lambda * C, where C is the expected cost at
// pi = sigmoid(nu) or, in sampled mode, the cost at the relaxed masks.
// The noise ell is supplied by the caller so a check can hold it fixed.
class ArchitectureObjective {
public:
    ArchitectureObjective(const NetworkGraph& graph, const CostModel& cost, const GateSet& gates, double lambda,
                          PenaltyMode mode = PenaltyMode::kExpected);

    struct Result {
        double task_loss = 0.0;
        double cost = 0.0;
        double total = 0.0;
        std::vector<double> masks;
        Gradients grads;
        // d total / d nu.
        std::vector<double> logit_grad;
    };

    // Train-mode forward (and backward when `with_grad`).
    Result evaluate(const Tensor& x, std::span<const int> labels, std::span<const double> noise, bool with_grad);

    [[nodiscard]] Executor& executor() { return exec_; }

private:
    const NetworkGraph& graph_;
    const CostModel& cost_;
    const GateSet& gates_;
    double lambda_;
    PenaltyMode mode_;
    Executor exec_;
};

} // namespace gatenas

#endif // GATENAS_OBJECTIVE_HPP

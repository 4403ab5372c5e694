#include "gatenas/objective.hpp"

namespace gatenas {

ArchitectureObjective::ArchitectureObjective(const NetworkGraph& graph, const CostModel& cost, const GateSet& gates,
                                             double lambda, PenaltyMode mode)
    : graph_(graph), cost_(cost), gates_(gates), lambda_(lambda), mode_(mode), exec_(graph)
{
}

ArchitectureObjective::Result ArchitectureObjective::evaluate(const Tensor& x, std::span<const int> labels,
                                                              std::span<const double> noise, bool with_grad)
{
    Result r;
    r.masks = gates_.relaxed(noise);
    r.task_loss = exec_.forward(x, labels, Mode::kTrain, r.masks);
    const std::vector<double> pi = gates_.probabilities();
    const std::span<const double> at = mode_ == PenaltyMode::kExpected ? std::span<const double>(pi) : r.masks;
    r.cost = expected_cost(cost_, at);
    r.total = r.task_loss + lambda_ * r.cost;
    if (!with_grad) {
        return r;
    }
    r.grads = exec_.backward();
    const std::vector<double> dcost = expected_cost_gradient(cost_, at);
    r.logit_grad.resize(gates_.size());
    for (std::size_t g = 0; g < gates_.size(); ++g) {
        const double dmask = relaxed_mask_grad(r.masks[g], gates_.tau);
        double grad = r.grads.masks[g] * dmask;
        if (mode_ == PenaltyMode::kExpected) {
            grad += lambda_ * dcost[g] * pi[g] * (1.0 - pi[g]);
        } else {
            grad += lambda_ * dcost[g] * dmask;
        }
        r.logit_grad[g] = grad;
    }
    return r;
}

} // namespace gatenas

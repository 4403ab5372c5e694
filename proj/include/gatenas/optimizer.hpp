#ifndef GATENAS_OPTIMIZER_HPP
#define GATENAS_OPTIMIZER_HPP

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace gatenas {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1.0;
    double weight_decay = 1.7e-5;
};

// One trainable tensor as seen by the optimizer.
struct ParamSlot {
    std::string name;
    std::span<double> value;
    std::span<const double> grad;
    bool decay = false;
};

struct Moments {
    std::vector<double> m;
    std::vector<double> v;
};

struct OptimizerState {
    AdamConfig config;
    std::int64_t step = 0;
    std::map<std::string, Moments> moments;
};

// Bias-corrected ADAM with decoupled weight decay on slots flagged `decay`:
//   p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
// All gradients are checked before anything is modified; a non-finite entry
// throws NumericError naming the tensor. `lr` overrides config.learning_rate
// when positive.
void adam_step(std::span<const ParamSlot> slots, OptimizerState& state, double lr = -1.0);

// lr0 * factor^(epoch / interval), epoch counted fractionally.
double scheduled_learning_rate(double lr0, double factor, double interval, double epoch);

nlohmann::json optimizer_to_json(const OptimizerState& state);
OptimizerState optimizer_from_json(const nlohmann::json& doc);

} // namespace gatenas

#endif // GATENAS_OPTIMIZER_HPP

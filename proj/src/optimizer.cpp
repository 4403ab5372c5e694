#include "gatenas/optimizer.hpp"

#include <cmath>

#include "gatenas/errors.hpp"

namespace gatenas {

void adam_step(std::span<const ParamSlot> slots, OptimizerState& state, double lr)
{
    for (const auto& slot : slots) {
        if (slot.value.size() != slot.grad.size()) {
            throw StructuralError("gradient for '" + slot.name + "' has " + std::to_string(slot.grad.size()) +
                                  " entries, parameter has " + std::to_string(slot.value.size()));
        }
        for (std::size_t i = 0; i < slot.grad.size(); ++i) {
            if (!std::isfinite(slot.grad[i])) {
                throw NumericError("non-finite gradient in '" + slot.name + "' at index " + std::to_string(i));
            }
        }
    }

    const AdamConfig& cfg = state.config;
    const double rate = lr > 0.0 ? lr : cfg.learning_rate;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);

    for (const auto& slot : slots) {
        Moments& mom = state.moments[slot.name];
        if (mom.m.size() != slot.value.size()) {
            mom.m.assign(slot.value.size(), 0.0);
            mom.v.assign(slot.value.size(), 0.0);
        }
        const double wd = slot.decay ? cfg.weight_decay : 0.0;
        for (std::size_t i = 0; i < slot.value.size(); ++i) {
            const double g = slot.grad[i];
            mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g;
            mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = mom.m[i] / c1;
            const double vhat = mom.v[i] / c2;
            slot.value[i] -= rate * (mhat / (std::sqrt(vhat) + cfg.epsilon) + wd * slot.value[i]);
        }
    }
}

double scheduled_learning_rate(double lr0, double factor, double interval, double epoch)
{
    if (interval <= 0.0 || factor == 1.0) {
        return lr0;
    }
    return lr0 * std::pow(factor, epoch / interval);
}

nlohmann::json optimizer_to_json(const OptimizerState& state)
{
    nlohmann::json moments = nlohmann::json::array();
    for (const auto& [name, mom] : state.moments) {
        moments.push_back({{"name", name}, {"m", mom.m}, {"v", mom.v}});
    }
    return {
        {"learning_rate", state.config.learning_rate},
        {"beta1", state.config.beta1},
        {"beta2", state.config.beta2},
        {"epsilon", state.config.epsilon},
        {"weight_decay", state.config.weight_decay},
        {"step", state.step},
        {"moments", moments},
    };
}

OptimizerState optimizer_from_json(const nlohmann::json& doc)
{
    OptimizerState state;
    state.config.learning_rate = doc.at("learning_rate").get<double>();
    state.config.beta1 = doc.at("beta1").get<double>();
    state.config.beta2 = doc.at("beta2").get<double>();
    state.config.epsilon = doc.at("epsilon").get<double>();
    state.config.weight_decay = doc.at("weight_decay").get<double>();
    state.step = doc.at("step").get<std::int64_t>();
    if (state.step < 0) {
        throw LoadError("optimizer step counter is negative");
    }
    for (const auto& entry : doc.at("moments")) {
        Moments mom;
        mom.m = entry.at("m").get<std::vector<double>>();
        mom.v = entry.at("v").get<std::vector<double>>();
        if (mom.m.size() != mom.v.size()) {
            throw LoadError("moment tensors for '" + entry.at("name").get<std::string>() + "' differ in size");
        }
        state.moments[entry.at("name").get<std::string>()] = std::move(mom);
    }
    return state;
}

} // namespace gatenas

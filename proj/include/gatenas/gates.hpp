#ifndef GATENAS_GATES_HPP
#define GATENAS_GATES_HPP

#include <span>
#include <vector>

#include <json.hpp>

#include "gatenas/random.hpp"

namespace gatenas {

inline constexpr double kDefaultTemperature = 0.001;
inline constexpr double kDefaultLogitInit = 2.5;
inline constexpr double kUniformClamp = 1e-7;

struct NoiseDraw {
    double u = 0.5;
    double ell = 0.0;
};

double sigmoid(double x);

// Standard logistic sample from a uniform clamped to [1e-7, 1 - 1e-7].
NoiseDraw logistic_from_uniform(double u);
NoiseDraw sample_logistic(Rng& rng);

// sigmoid((logit + ell) / tau). Throws ConfigError for tau <= 0.
double relaxed_mask(double logit, double ell, double tau);
// d relaxed_mask / d logit expressed through the mask value.
double relaxed_mask_grad(double mask, double tau);

double keep_prob(double logit);
int hard_sample(double logit, Rng& rng);

// Logits for every mask group plus the shared temperature.
struct GateSet {
    std::vector<double> logits;
    double tau = kDefaultTemperature;

    GateSet() = default;
    GateSet(std::size_t groups, double init, double temperature);

    [[nodiscard]] std::size_t size() const { return logits.size(); }
    [[nodiscard]] std::vector<double> probabilities() const;

    // One logistic draw per group.
    [[nodiscard]] std::vector<double> sample_noise(Rng& rng) const;
    [[nodiscard]] std::vector<double> relaxed(std::span<const double> noise) const;
    [[nodiscard]] std::vector<double> hard(Rng& rng) const;
    // 1 where the logit is positive (the mode of each gate).
    [[nodiscard]] std::vector<double> most_likely() const;
};

nlohmann::json gates_to_json(const GateSet& gates);
GateSet gates_from_json(const nlohmann::json& doc);
// {"<group>": pi, ...}
nlohmann::json probabilities_to_json(std::span<const double> pi);

} // namespace gatenas

#endif // GATENAS_GATES_HPP

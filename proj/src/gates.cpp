#include "gatenas/gates.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gatenas/errors.hpp"

namespace gatenas {

double sigmoid(double x)
{
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

NoiseDraw logistic_from_uniform(double u)
{
    u = std::clamp(u, kUniformClamp, 1.0 - kUniformClamp);
    return NoiseDraw{u, std::log(u) - std::log1p(-u)};
}

NoiseDraw sample_logistic(Rng& rng)
{
    return logistic_from_uniform(rng.uniform());
}

double relaxed_mask(double logit, double ell, double tau)
{
    if (!(tau > 0.0)) {
        throw ConfigError("temperature must be positive, got " + std::to_string(tau));
    }
    return sigmoid((logit + ell) / tau);
}

double relaxed_mask_grad(double mask, double tau)
{
    return mask * (1.0 - mask) / tau;
}

double keep_prob(double logit)
{
    return sigmoid(logit);
}

int hard_sample(double logit, Rng& rng)
{
    return rng.uniform() < keep_prob(logit) ? 1 : 0;
}

GateSet::GateSet(std::size_t groups, double init, double temperature) : logits(groups, init), tau(temperature)
{
    if (!(temperature > 0.0)) {
        throw ConfigError("temperature must be positive, got " + std::to_string(temperature));
    }
}

std::vector<double> GateSet::probabilities() const
{
    std::vector<double> pi(logits.size());
    std::transform(logits.begin(), logits.end(), pi.begin(), keep_prob);
    return pi;
}

std::vector<double> GateSet::sample_noise(Rng& rng) const
{
    std::vector<double> ell(logits.size());
    for (auto& e : ell) {
        e = sample_logistic(rng).ell;
    }
    return ell;
}

std::vector<double> GateSet::relaxed(std::span<const double> noise) const
{
    std::vector<double> m(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        m[i] = relaxed_mask(logits[i], noise[i], tau);
    }
    return m;
}

std::vector<double> GateSet::hard(Rng& rng) const
{
    std::vector<double> m(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        m[i] = hard_sample(logits[i], rng);
    }
    return m;
}

std::vector<double> GateSet::most_likely() const
{
    std::vector<double> m(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        m[i] = logits[i] > 0.0 ? 1.0 : 0.0;
    }
    return m;
}

nlohmann::json gates_to_json(const GateSet& gates)
{
    return {{"tau", gates.tau}, {"logits", gates.logits}};
}

GateSet gates_from_json(const nlohmann::json& doc)
{
    GateSet g;
    g.tau = doc.at("tau").get<double>();
    if (!(g.tau > 0.0)) {
        throw ConfigError("temperature must be positive");
    }
    g.logits = doc.at("logits").get<std::vector<double>>();
    return g;
}

nlohmann::json probabilities_to_json(std::span<const double> pi)
{
    nlohmann::json out = nlohmann::json::object();
    for (std::size_t i = 0; i < pi.size(); ++i) {
        out[std::to_string(i)] = pi[i];
    }
    return out;
}

} // namespace gatenas

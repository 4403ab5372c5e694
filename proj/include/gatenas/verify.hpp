#ifndef GATENAS_VERIFY_HPP
#define GATENAS_VERIFY_HPP

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gatenas/gradcheck.hpp"
#include "gatenas/graph.hpp"

namespace gatenas {

// Small conv net with three masked convolutions (7 gate groups) on 2x6x6
// inputs and 3 classes, unmasked.
NetworkGraph mini_cnn();

// Finite-difference check of L_t + lambda * E[cost] on the masked mini CNN
// with logistic noise frozen: every gate logit plus random weight
// coordinates, `coordinates` in total.
GradcheckReport check_objective_gradients(std::uint64_t seed, int coordinates, double step, double tau,
                                          double lambda);

struct CostCheck {
    int instances = 0;
    int max_groups = 0;
    double max_abs_error = 0.0;
};

// Expected cost vs. exhaustive enumeration on random graphs whose group
// count is at most `max_groups`, for both metrics.
CostCheck check_cost_bruteforce(std::uint64_t seed, int instances, int max_groups);

struct SamplerCheck {
    double logit = 0.0;
    double tau = 0.0;
    int draws = 0;
    double rate = 0.0;
    double expected = 0.0;
    double tolerance = 0.0;
    [[nodiscard]] bool passed() const;
};

// Empirical P(relaxed mask > 0.5) against sigmoid(logit).
SamplerCheck check_threshold_law(double logit, double tau, int draws, std::uint64_t seed);

// Kolmogorov-Smirnov distance of `draws` logistic samples to the logistic
// CDF.
double logistic_ks_statistic(int draws, std::uint64_t seed);

struct GroupingCheck {
    int spaces = 0;
    int groups = 0;
    int failures = 0;
    std::vector<std::string> failed;
};

// group_zero_equivalence for every group of `spaces` random small spaces.
GroupingCheck check_grouping(std::uint64_t seed, int spaces);

// Max abs difference between the additive block and the concat block with
// the identity projection, on random inputs.
double check_aggregator_equivalence(int operators, int width, std::uint64_t seed);

struct VerifyItem {
    std::string name;
    bool passed = false;
    std::string detail;
};

// The built-in oracle suite behind `gatenas verify`.
std::vector<VerifyItem> run_verification(std::uint64_t seed, std::ostream* log = nullptr);

} // namespace gatenas

#endif // GATENAS_VERIFY_HPP

#ifndef GATENAS_COST_HPP
#define GATENAS_COST_HPP

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gatenas/graph.hpp"
#include "gatenas/grouping.hpp"

namespace gatenas {

enum class Metric { kParams, kFlops };

std::string_view to_string(Metric metric);
Metric parse_metric(std::string_view text);

struct CostTerm {
    int owner = 0;
    // (adjacent group, coefficient) pairs; owner never appears here.
    std::vector<std::pair<int, double>> adjacent;
    // Connections whose other end is always on.
    double constant = 0.0;
};

// Bilinear cost over independent gates. Each weight connection is charged
// once: to the owner's adjacency when both ends are gated, to the gated
// end's constant when only one is, and to `fixed` when neither is.
struct CostModel {
    Metric metric = Metric::kParams;
    std::vector<CostTerm> terms;
    double fixed = 0.0;

    [[nodiscard]] std::size_t num_groups() const { return terms.size(); }
};

struct CostOptions {
    Metric metric = Metric::kParams;
    // Also charge biases and batchnorm scale/shift (parameter metric only).
    bool count_aux_params = false;
};

// Coefficient per connection: k*k weights (params) or k*k*H_out*W_out
// multiplies (flops); dense connections weigh 1, depthwise kernels k*k per
// channel (times the output plane for flops).
CostModel cost_terms(const NetworkGraph& graph, const GroupMap& map, const CostOptions& options = {});

// sum_i pi_i * (sum_j c_ij pi_j + const_i). Excludes model.fixed.
double expected_cost(const CostModel& model, std::span<const double> pi);
// d expected_cost / d pi.
std::vector<double> expected_cost_gradient(const CostModel& model, std::span<const double> pi);
// Same bilinear form at (possibly relaxed) mask values.
double sampled_cost(const CostModel& model, std::span<const double> masks);
// Enumerates all 2^n hard masks. Refuses more than 20 groups.
double exact_expected_cost_bruteforce(const CostModel& model, std::span<const double> pi);

// Parameter or multiply count of a plain graph, layer by layer.
double graph_cost(const NetworkGraph& graph, const CostOptions& options = {});

struct CostReport {
    Metric metric = Metric::kParams;
    double expected = 0.0;
    double fixed = 0.0;
    double total = 0.0;
    std::vector<double> per_term;
    std::vector<double> pi;
};

CostReport make_cost_report(const CostModel& model, std::span<const double> pi);
nlohmann::json cost_report_to_json(const CostReport& report);

} // namespace gatenas

#endif // GATENAS_COST_HPP

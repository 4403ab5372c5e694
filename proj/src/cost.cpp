#include "gatenas/cost.hpp"

#include <map>

#include "gatenas/errors.hpp"

namespace gatenas {

std::string_view to_string(Metric metric)
{
    return metric == Metric::kParams ? "params" : "flops";
}

Metric parse_metric(std::string_view text)
{
    if (text == "params") {
        return Metric::kParams;
    }
    if (text == "flops") {
        return Metric::kFlops;
    }
    throw ConfigError("unknown cost metric '" + std::string(text) + "' (expected params or flops)");
}

namespace {

double connection_coefficient(const Node& node, Metric metric)
{
    if (node.kind == NodeKind::kDense) {
        return 1.0;
    }
    const double k2 = static_cast<double>(node.kernel) * node.kernel;
    return metric == Metric::kParams ? k2 : k2 * node.shape.spatial();
}

} // namespace

CostModel cost_terms(const NetworkGraph& graph, const GroupMap& map, const CostOptions& options)
{
    CostModel model;
    model.metric = options.metric;
    model.terms.resize(map.size());
    std::vector<std::map<int, double>> adjacency(map.size());
    for (std::size_t g = 0; g < map.size(); ++g) {
        model.terms[g].owner = static_cast<int>(g);
    }

    auto charge_one = [&](int g, double c) {
        if (g >= 0) {
            model.terms[static_cast<std::size_t>(g)].constant += c;
        } else {
            model.fixed += c;
        }
    };
    auto charge_pair = [&](int out, int in, double c) {
        if (out >= 0 && in >= 0 && out != in) {
            adjacency[static_cast<std::size_t>(out)][in] += c;
        } else if (out >= 0) {
            charge_one(out, c);
        } else {
            charge_one(in, c);
        }
    };
    const bool aux = options.count_aux_params && options.metric == Metric::kParams;

    for (NodeId id : graph.topological_order()) {
        const Node& node = graph.node(id);
        const auto& out_ids = map.channel_groups.at(static_cast<std::size_t>(id));
        switch (node.kind) {
        case NodeKind::kConv:
        case NodeKind::kDense: {
            const auto& in_ids = map.channel_groups.at(static_cast<std::size_t>(node.inputs.front()));
            const double c = connection_coefficient(node, options.metric);
            for (int o : out_ids) {
                for (int i : in_ids) {
                    charge_pair(o, i, c);
                }
                if (aux && node.kind == NodeKind::kDense) {
                    charge_one(o, 1.0);
                }
            }
            break;
        }
        case NodeKind::kDepthwiseConv: {
            const double c = connection_coefficient(node, options.metric);
            for (int o : out_ids) {
                charge_one(o, c);
            }
            break;
        }
        case NodeKind::kBatchNorm:
            if (aux) {
                for (int o : out_ids) {
                    charge_one(o, 2.0);
                }
            }
            break;
        default:
            break;
        }
    }
    for (std::size_t g = 0; g < map.size(); ++g) {
        for (const auto& [j, c] : adjacency[g]) {
            model.terms[g].adjacent.emplace_back(j, c);
        }
    }
    return model;
}

namespace {

void check_size(const CostModel& model, std::span<const double> values)
{
    if (values.size() != model.num_groups()) {
        throw ConfigError("cost model has " + std::to_string(model.num_groups()) + " groups, got " +
                          std::to_string(values.size()) + " values");
    }
}

double term_value(const CostTerm& t, std::span<const double> v)
{
    double inner = t.constant;
    for (const auto& [j, c] : t.adjacent) {
        inner += c * v[static_cast<std::size_t>(j)];
    }
    return v[static_cast<std::size_t>(t.owner)] * inner;
}

} // namespace

double expected_cost(const CostModel& model, std::span<const double> pi)
{
    check_size(model, pi);
    double total = 0.0;
    for (const auto& t : model.terms) {
        total += term_value(t, pi);
    }
    return total;
}

std::vector<double> expected_cost_gradient(const CostModel& model, std::span<const double> pi)
{
    check_size(model, pi);
    std::vector<double> grad(model.num_groups(), 0.0);
    for (const auto& t : model.terms) {
        const auto owner = static_cast<std::size_t>(t.owner);
        double inner = t.constant;
        for (const auto& [j, c] : t.adjacent) {
            inner += c * pi[static_cast<std::size_t>(j)];
            grad[static_cast<std::size_t>(j)] += c * pi[owner];
        }
        grad[owner] += inner;
    }
    return grad;
}

double sampled_cost(const CostModel& model, std::span<const double> masks)
{
    return expected_cost(model, masks);
}

double exact_expected_cost_bruteforce(const CostModel& model, std::span<const double> pi)
{
    check_size(model, pi);
    const std::size_t n = model.num_groups();
    if (n > 20) {
        throw ConfigError("brute-force enumeration refuses " + std::to_string(n) + " groups (limit 20)");
    }
    std::vector<double> masks(n);
    double total = 0.0;
    for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << n); ++bits) {
        double prob = 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            const bool on = ((bits >> i) & 1U) != 0;
            masks[i] = on ? 1.0 : 0.0;
            prob *= on ? pi[i] : 1.0 - pi[i];
        }
        if (prob != 0.0) {
            total += prob * sampled_cost(model, masks);
        }
    }
    return total;
}

double graph_cost(const NetworkGraph& graph, const CostOptions& options)
{
    const bool aux = options.count_aux_params && options.metric == Metric::kParams;
    double total = 0.0;
    for (const Node& node : graph.nodes()) {
        switch (node.kind) {
        case NodeKind::kConv:
        case NodeKind::kDense: {
            const double in = graph.node(node.inputs.front()).shape.channels;
            total += connection_coefficient(node, options.metric) * node.shape.channels * in;
            if (aux && node.kind == NodeKind::kDense) {
                total += node.shape.channels;
            }
            break;
        }
        case NodeKind::kDepthwiseConv:
            total += connection_coefficient(node, options.metric) * node.shape.channels;
            break;
        case NodeKind::kBatchNorm:
            if (aux) {
                total += 2.0 * node.shape.channels;
            }
            break;
        default:
            break;
        }
    }
    return total;
}

CostReport make_cost_report(const CostModel& model, std::span<const double> pi)
{
    check_size(model, pi);
    CostReport report;
    report.metric = model.metric;
    report.fixed = model.fixed;
    report.pi.assign(pi.begin(), pi.end());
    for (const auto& t : model.terms) {
        report.per_term.push_back(term_value(t, pi));
        report.expected += report.per_term.back();
    }
    report.total = report.fixed + report.expected;
    return report;
}

nlohmann::json cost_report_to_json(const CostReport& report)
{
    return {
        {"metric", std::string(to_string(report.metric))},
        {"expected", report.expected},
        {"fixed", report.fixed},
        {"total", report.total},
        {"per_term", report.per_term},
        {"pi", report.pi},
    };
}

} // namespace gatenas

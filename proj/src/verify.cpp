#include "gatenas/verify.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "gatenas/cost.hpp"
#include "gatenas/errors.hpp"
#include "gatenas/executor.hpp"
#include "gatenas/gates.hpp"
#include "gatenas/grouping.hpp"
#include "gatenas/objective.hpp"
#include "gatenas/optimizer.hpp"
#include "gatenas/spaces.hpp"

namespace gatenas {

NetworkGraph mini_cnn()
{
    NetworkGraph g;
    NodeId x = g.add_input("input", Shape{2, 6, 6});
    x = g.add_relu("c1/relu", g.add_batchnorm("c1/bn", g.add_conv("c1", x, 6, 3)));
    x = g.add_relu("dw/relu", g.add_batchnorm("dw/bn", g.add_depthwise("dw", x, 3, 2)));
    x = g.add_relu("c2/relu", g.add_batchnorm("c2/bn", g.add_conv("c2", x, 5, 1)));
    g.add_softmax_xent("loss", g.add_dense("classifier", g.add_global_pool("gap", x), 3));
    return g;
}

GradcheckReport check_objective_gradients(std::uint64_t seed, int coordinates, double step, double tau,
                                          double lambda)
{
    NetworkGraph graph = insert_masks(mini_cnn());
    const GroupMap map = assign_groups(graph);
    Rng rng = make_rng(seed, Stream::kCheck);
    graph.initialize_parameters(rng);
    for (auto& node : graph.nodes()) {
        for (auto& p : node.params) {
            if (p.name == "gamma" || p.name == "beta" || p.name == "bias") {
                for (auto& v : p.value) {
                    v = p.name == "gamma" ? rng.uniform(0.5, 1.5) : rng.uniform(-0.5, 0.5);
                }
            }
        }
    }
    const CostModel cost = cost_terms(graph, map, CostOptions{Metric::kParams, false});
    GateSet gates(map.size(), 0.0, tau);
    for (auto& l : gates.logits) {
        l = rng.uniform(-1.0, 1.0);
    }
    const auto noise = gates.sample_noise(rng);

    const Node& in = graph.node(graph.input_id());
    Tensor x({4, in.source_channels, in.shape.height, in.shape.width});
    for (auto& v : x.data) {
        v = rng.normal();
    }
    const std::vector<int> labels{0, 1, 2, 1};

    ArchitectureObjective objective(graph, cost, gates, lambda);
    const auto base = objective.evaluate(x, labels, noise, true);

    std::vector<Coordinate> coords;
    for (std::size_t gidx = 0; gidx < gates.size(); ++gidx) {
        coords.push_back(Coordinate{"nu[" + std::to_string(gidx) + "]", &gates.logits[gidx], base.logit_grad[gidx],
                                    gate_saturated(base.masks[gidx])});
    }
    struct Ref {
        std::size_t node;
        std::size_t param;
        std::size_t index;
    };
    std::vector<Ref> pool;
    for (std::size_t id = 0; id < graph.size(); ++id) {
        const Node& node = graph.node(static_cast<NodeId>(id));
        for (std::size_t k = 0; k < node.params.size(); ++k) {
            for (std::size_t i = 0; i < node.params[k].value.size(); ++i) {
                pool.push_back(Ref{id, k, i});
            }
        }
    }
    rng.shuffle(std::span<Ref>(pool));
    const auto extra = static_cast<std::size_t>(std::max(0, coordinates - static_cast<int>(coords.size())));
    for (std::size_t j = 0; j < std::min(extra, pool.size()); ++j) {
        const Ref& r = pool[j];
        Node& node = graph.node(static_cast<NodeId>(r.node));
        coords.push_back(Coordinate{node.name + "." + node.params[r.param].name + "[" + std::to_string(r.index) + "]",
                                    &node.params[r.param].value[r.index], base.grads.params[r.node][r.param][r.index],
                                    false});
    }
    std::vector<NodeId> relu_inputs;
    for (std::size_t id = 0; id < graph.size(); ++id) {
        const Node& node = graph.node(static_cast<NodeId>(id));
        if (node.kind == NodeKind::kRelu) {
            relu_inputs.push_back(node.inputs.front());
        }
    }
    auto pattern = [&]() {
        std::vector<char> on;
        for (NodeId id : relu_inputs) {
            for (double v : objective.executor().activation(id).data) {
                on.push_back(v > 0.0 ? 1 : 0);
            }
        }
        return on;
    };
    return finite_difference_check([&]() { return objective.evaluate(x, labels, noise, false).total; }, coords, step,
                                   pattern);
}

namespace {

// Random small DAG of convs, depthwise convs, adds and concats, masked and
// grouped.
NetworkGraph random_masked_graph(Rng& rng)
{
    auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); };
    NetworkGraph g;
    std::vector<NodeId> live{g.add_input("input", Shape{pick(1, 2), 4, 4})};
    const int steps = pick(2, 4);
    bool pooled = false;
    for (int s = 0; s < steps; ++s) {
        const std::string name = "n" + std::to_string(s);
        const NodeId x = live[rng.below(live.size())];
        const int choice = pick(0, 5);
        if (choice <= 1) {
            const NodeId c = g.add_conv(name, x, pick(1, 3), rng.uniform() < 0.5 ? 1 : 3);
            live.push_back(g.add_relu(name + "/relu", g.add_batchnorm(name + "/bn", c)));
        } else if (choice == 2 && g.node(x).kind != NodeKind::kInput) {
            live.push_back(g.add_relu(name + "/relu", g.add_batchnorm(name + "/bn", g.add_depthwise(name, x, 3))));
        } else if (choice == 3) {
            const NodeId y = live[rng.below(live.size())];
            if (g.node(x).shape.spatial() == g.node(y).shape.spatial() && x != y) {
                live.push_back(g.add_concat(name, {x, y}));
            }
        } else if (choice == 4) {
            const int c = g.node(x).shape.channels;
            const NodeId b = g.add_batchnorm(name + "/bn", g.add_conv(name, x, c, 1));
            live.push_back(g.add_add(name + "/add", {x, b}));
        } else if (!pooled) {
            pooled = true;
            live.push_back(g.add_avgpool(name, x));
        }
    }
    g.add_softmax_xent("loss", g.add_dense("classifier", g.add_global_pool("gap", live.back()), 2));
    NetworkGraph masked = insert_masks(g, MaskOptions{MaskPolicy::kAllConvs, rng.uniform() < 0.3});
    assign_groups(masked);
    return masked;
}

} // namespace

CostCheck check_cost_bruteforce(std::uint64_t seed, int instances, int max_groups)
{
    Rng rng = make_rng(seed, Stream::kCheck);
    CostCheck check;
    int attempts = 0;
    while (check.instances < instances) {
        if (++attempts > instances * 200) {
            throw StateError("could not draw enough small random graphs");
        }
        NetworkGraph graph;
        GroupMap map;
        if (rng.uniform() < 0.5) {
            graph = random_masked_graph(rng);
            map = assign_groups(graph);
        } else {
            PreparedSpace ps = prepare_space(random_space_config(rng));
            graph = std::move(ps.graph);
            map = std::move(ps.groups);
        }
        if (map.size() == 0 || static_cast<int>(map.size()) > max_groups) {
            continue;
        }
        std::vector<double> pi(map.size());
        for (auto& p : pi) {
            p = rng.uniform();
        }
        for (Metric metric : {Metric::kParams, Metric::kFlops}) {
            const CostModel model = cost_terms(graph, map, CostOptions{metric, false});
            const double err =
                std::abs(expected_cost(model, pi) - exact_expected_cost_bruteforce(model, pi));
            check.max_abs_error = std::max(check.max_abs_error, err);
        }
        check.max_groups = std::max(check.max_groups, static_cast<int>(map.size()));
        ++check.instances;
    }
    return check;
}

bool SamplerCheck::passed() const
{
    return std::abs(rate - expected) <= tolerance;
}

SamplerCheck check_threshold_law(double logit, double tau, int draws, std::uint64_t seed)
{
    Rng rng = make_rng(seed, Stream::kCheck);
    long hits = 0;
    for (int i = 0; i < draws; ++i) {
        hits += relaxed_mask(logit, sample_logistic(rng).ell, tau) > 0.5 ? 1 : 0;
    }
    SamplerCheck c;
    c.logit = logit;
    c.tau = tau;
    c.draws = draws;
    c.rate = static_cast<double>(hits) / draws;
    c.expected = keep_prob(logit);
    c.tolerance = 3.0 * std::sqrt(c.expected * (1.0 - c.expected) / draws);
    return c;
}

double logistic_ks_statistic(int draws, std::uint64_t seed)
{
    Rng rng = make_rng(seed, Stream::kCheck);
    std::vector<double> x(static_cast<std::size_t>(draws));
    for (auto& v : x) {
        v = sample_logistic(rng).ell;
    }
    std::sort(x.begin(), x.end());
    double d = 0.0;
    const double n = draws;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double f = 1.0 / (1.0 + std::exp(-x[i]));
        d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
    }
    return d;
}

GroupingCheck check_grouping(std::uint64_t seed, int spaces)
{
    Rng rng = make_rng(seed, Stream::kCheck);
    GroupingCheck check;
    for (int s = 0; s < spaces; ++s) {
        const SpaceConfig cfg = random_space_config(rng);
        const PreparedSpace ps = prepare_space(cfg);
        ++check.spaces;
        for (std::size_t g = 0; g < ps.groups.size(); ++g) {
            ++check.groups;
            if (!group_zero_equivalence(ps.graph, ps.groups, static_cast<int>(g), seed + 1000 * s + g)) {
                ++check.failures;
                check.failed.push_back("space " + std::to_string(s) + " (" + std::string(to_string(cfg.kind)) +
                                       ") group " + std::to_string(g));
            }
        }
    }
    return check;
}

double check_aggregator_equivalence(int operators, int width, std::uint64_t seed)
{
    Rng rng = make_rng(seed, Stream::kCheck);
    NetworkGraph add_block;
    NetworkGraph cat_block;
    const Shape in{2, 5, 5};
    const NodeId a_in = add_block.add_input("input", in);
    const NodeId c_in = cat_block.add_input("input", in);
    std::vector<NodeId> a_ops;
    std::vector<NodeId> c_ops;
    for (int k = 0; k < operators; ++k) {
        const std::string name = "op" + std::to_string(k);
        const int kernel = k % 2 == 0 ? 3 : 1;
        a_ops.push_back(add_block.add_conv(name, a_in, width, kernel));
        c_ops.push_back(cat_block.add_conv(name, c_in, width, kernel));
        Param* wa = add_block.node(a_ops.back()).find_param("weight");
        for (auto& v : wa->value) {
            v = rng.uniform(-1.0, 1.0);
        }
        cat_block.node(c_ops.back()).find_param("weight")->value = wa->value;
    }
    add_block.add_add("sum", a_ops);
    const NodeId proj = cat_block.add_conv("proj", cat_block.add_concat("concat", c_ops), width, 1);
    cat_block.node(proj).find_param("weight")->value = concat_aggregator_equivalence_weights(operators, width);

    Tensor x({3, in.channels, in.height, in.width});
    for (auto& v : x.data) {
        v = rng.normal();
    }
    Executor ea(add_block);
    Executor ec(cat_block);
    ea.forward(x, {}, Mode::kEval);
    ec.forward(x, {}, Mode::kEval);
    double worst = 0.0;
    for (std::size_t i = 0; i < ea.output().size(); ++i) {
        worst = std::max(worst, std::abs(ea.output().data[i] - ec.output().data[i]));
    }
    return worst;
}

std::vector<VerifyItem> run_verification(std::uint64_t seed, std::ostream* log)
{
    std::vector<VerifyItem> items;
    auto add = [&](std::string name, bool ok, std::string detail) {
        if (log != nullptr) {
            *log << (ok ? "PASS " : "FAIL ") << name << ": " << detail << '\n';
        }
        items.push_back(VerifyItem{std::move(name), ok, std::move(detail)});
    };
    auto num = [](double v) {
        std::ostringstream out;
        out.precision(4);
        out << v;
        return out.str();
    };

    {
        std::vector<double> value{0.0};
        const std::vector<double> grad{1.0};
        OptimizerState state;
        state.config.learning_rate = 0.1;
        state.config.weight_decay = 0.0;
        const ParamSlot slot{"p", value, grad, true};
        adam_step(std::span<const ParamSlot>(&slot, 1), state);
        add("adam first step", std::abs(value[0] + 0.05) < 1e-12, "delta " + num(value[0]) + " (expected -0.05)");
    }
    {
        const auto r = check_objective_gradients(seed, 255, 1e-4, 0.5, 0.01);
        add("objective gradients", r.checked >= 200 && r.max_rel_error < 1e-3 && r.nan_count == 0,
            std::to_string(r.checked) + " coordinates (" + std::to_string(r.kinks) + " at kinks skipped), max relative error " +
                num(r.max_rel_error));
    }
    {
        const auto r = check_cost_bruteforce(seed, 50, 12);
        add("expected cost vs enumeration", r.max_abs_error <= 1e-9,
            std::to_string(r.instances) + " graphs, max abs error " + num(r.max_abs_error));
    }
    {
        bool ok = true;
        std::string detail;
        int k = 0;
        for (double nu : {-2.5, 0.0, 2.5}) {
            for (double tau : {1.0, 0.001}) {
                const auto c = check_threshold_law(nu, tau, 100000, seed + static_cast<std::uint64_t>(k++));
                ok = ok && c.passed();
                detail += "nu=" + num(nu) + ",tau=" + num(tau) + ":" + num(c.rate) + "/" + num(c.expected) + " ";
            }
        }
        add("threshold law", ok, detail);
    }
    {
        const int n = 100000;
        const double d = logistic_ks_statistic(n, seed);
        const double critical = 1.628 / std::sqrt(static_cast<double>(n));
        add("logistic KS", d < critical, "D=" + num(d) + " critical " + num(critical));
    }
    {
        const auto r = check_grouping(seed, 20);
        add("group deletion equivalence", r.failures == 0,
            std::to_string(r.groups) + " groups in " + std::to_string(r.spaces) + " spaces, " +
                std::to_string(r.failures) + " failures");
    }
    {
        const double d = check_aggregator_equivalence(3, 4, seed);
        add("concat aggregator generalizes add", d < 1e-5, "max abs deviation " + num(d));
    }
    return items;
}

} // namespace gatenas

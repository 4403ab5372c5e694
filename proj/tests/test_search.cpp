#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "gatenas/config.hpp"
#include "gatenas/cost.hpp"
#include "gatenas/errors.hpp"
#include "gatenas/grouping.hpp"
#include "gatenas/search.hpp"
#include "gatenas/spaces.hpp"

using namespace gatenas;

namespace {

const Dataset& features_data()
{
    static const Dataset data = split_dataset(make_synthetic(SyntheticSpec{}), 0.2, 0, true);
    return data;
}

SpaceConfig feature_mlp(bool gate_inputs)
{
    SpaceConfig cfg;
    cfg.kind = SpaceKind::kMlp;
    cfg.depth = 3;
    cfg.base_width = 16;
    cfg.input = Shape{20, 1, 1};
    cfg.classes = 2;
    cfg.masks.gate_inputs = gate_inputs;
    return cfg;
}

SearchConfig quick(std::uint64_t seed)
{
    SearchConfig sc;
    sc.search_epochs = 5;
    sc.retrain_epochs = 3;
    sc.batch_size = 32;
    sc.learning_rate = 0.3;
    sc.bn_momentum = 0.9;
    sc.seed = seed;
    return sc;
}

// One hidden layer of width 4 on 3 inputs.
PreparedSpace narrow_mlp(int width)
{
    SpaceConfig cfg;
    cfg.kind = SpaceKind::kMlp;
    cfg.depth = 2;
    cfg.base_width = width;
    cfg.input = Shape{3, 1, 1};
    cfg.classes = 2;
    return prepare_space(cfg);
}

SpaceConfig concat_cell()
{
    SpaceConfig cfg;
    cfg.kind = SpaceKind::kOneShotCell;
    cfg.cells = 1;
    cfg.blocks = 2;
    cfg.base_width = 4;
    cfg.operators = {"conv1x1", "sep3x3"};
    cfg.input = Shape{1, 6, 6};
    cfg.classes = 3;
    return cfg;
}

} // namespace

TEST_CASE("export floors the expected width")
{
    const auto ps = narrow_mlp(4);
    REQUIRE(ps.groups.size() == 4);
    const std::vector<double> pi = {0.9, 0.9, 0.9, 0.3};
    const auto ex = export_architecture(ps, pi);
    CHECK(ex.arch.widths.at("hidden0") == 3);
    CHECK(ex.warnings.empty());
    CHECK(export_architecture(ps, pi).arch == ex.arch);

    const std::vector<double> ones(4, 1.0);
    CHECK(export_architecture(ps, ones).arch == full_architecture(ps));
    const std::vector<double> wrong(3, 1.0);
    CHECK_THROWS_AS((void)export_architecture(ps, wrong), StructuralError);
}

TEST_CASE("mandatory layer clamps to one channel")
{
    const auto ps = narrow_mlp(2);
    const std::vector<double> pi = {0.49, 0.49};
    const auto ex = export_architecture(ps, pi);
    CHECK(ex.arch.widths.at("hidden0") == 1);
    CHECK(ex.warnings.size() == 1);
}

TEST_CASE("export of an empty operator drops it and revives blocks")
{
    const auto ps = prepare_space(concat_cell());
    std::vector<double> pi(ps.groups.size(), 1.0);
    // Switch off every group produced inside c0b0's conv1x1 operator.
    for (const auto& grp : ps.groups.groups) {
        for (const auto& s : grp.producing) {
            if (ps.graph.node(s.node).op == "c0b0/conv1x1") {
                pi[static_cast<std::size_t>(grp.id)] = 0.0;
            }
        }
    }
    auto ex = export_architecture(ps, pi);
    CHECK_FALSE(ex.arch.operators.at("c0b0/conv1x1"));
    CHECK(ex.arch.operators.at("c0b0/sep3x3"));
    CHECK_NOTHROW((void)materialize(ps, ex.arch, pi, 0));

    std::fill(pi.begin(), pi.end(), 0.0);
    ex = export_architecture(ps, pi);
    for (const auto& block : ps.space.blocks) {
        int present = 0;
        for (const auto& op : block.operators) {
            present += ex.arch.operators.at(op) ? 1 : 0;
        }
        CHECK(present >= 1);
    }
    CHECK_FALSE(ex.warnings.empty());
    CHECK_NOTHROW((void)materialize(ps, ex.arch, pi, 0));
}

TEST_CASE("materialize at full width mirrors the supernetwork")
{
    const auto ps = prepare_space(concat_cell());
    const auto net = materialize(ps, full_architecture(ps), {}, 0);
    CHECK_FALSE(net.graph.has_masks());
    CHECK(net.graph.parameter_count() == ps.space.graph.parameter_count());
    for (const auto& node : ps.space.graph.nodes()) {
        CHECK(net.graph.node(net.graph.id_of(node.name)).shape == node.shape);
    }
}

TEST_CASE("removing an operator shrinks the projection")
{
    const auto ps = prepare_space(concat_cell());
    auto arch = full_architecture(ps);
    arch.operators["c0b0/conv1x1"] = false;
    arch.widths["c0b0/conv1x1/conv"] = 0;
    const auto net = materialize(ps, arch, {}, 0);
    const auto& proj = net.graph.node(net.graph.id_of("c0b0/proj"));
    CHECK(net.graph.node(proj.inputs[0]).shape.channels == 4);
    CHECK_FALSE(net.graph.find("c0b0/conv1x1/conv").has_value());

    // The operator's own weights plus the projection columns it fed.
    double op_weights = 0.0;
    for (const auto& node : ps.space.graph.nodes()) {
        if (node.op == "c0b0/conv1x1") {
            for (const auto& p : node.params) {
                op_weights += p.name == "weight" ? static_cast<double>(p.value.size()) : 0.0;
            }
        }
    }
    const double drop = architecture_cost(ps, full_architecture(ps), {}) - architecture_cost(ps, arch, {});
    CHECK(drop == op_weights + 4.0 * 4.0);
}

TEST_CASE("exported cost stays within one channel per layer of the expected cost")
{
    const auto ps = prepare_space(concat_cell());
    const auto model = cost_terms(ps.graph, ps.groups);
    // Largest cost one channel can carry: its row plus its column at full width.
    double per_channel = 0.0;
    for (const auto& node : ps.space.graph.nodes()) {
        if (node.kind == NodeKind::kConv || node.kind == NodeKind::kDense) {
            const int in = ps.space.graph.node(node.inputs[0]).shape.channels;
            per_channel = std::max(per_channel, static_cast<double>(node.kernel * node.kernel) * in);
            per_channel = std::max(per_channel, static_cast<double>(node.kernel * node.kernel) * node.units);
        }
    }
    Rng rng(14);
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<double> pi(ps.groups.size());
        for (auto& p : pi) {
            p = rng.uniform(0.3, 1.0);
        }
        const auto ex = export_architecture(ps, pi);
        const double bound =
            expected_cost(model, pi) + model.fixed + static_cast<double>(ps.layers.size()) * per_channel;
        CHECK(architecture_cost(ps, ex.arch, {}) <= bound);
    }
}

TEST_CASE("hard-sample export draws binary masks")
{
    const std::vector<double> pi = {0.0, 1.0, 0.5, 0.5};
    Rng a(1), b(1);
    const auto m = sample_hard_masks(pi, a);
    CHECK(m == sample_hard_masks(pi, b));
    CHECK(m[0] == 0.0);
    CHECK(m[1] == 1.0);
    for (double v : m) {
        CHECK((v == 0.0 || v == 1.0));
    }
}

TEST_CASE("zero retrain epochs gives chance accuracy")
{
    const auto& data = features_data();
    const auto ps = prepare_space(feature_mlp(false));
    auto sc = quick(0);
    sc.retrain_epochs = 0;
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        sc.seed = seed;
        const auto net = materialize(ps, full_architecture(ps), {}, seed);
        total += retrain(net.graph, data, sc).final_accuracy;
    }
    CHECK(std::abs(total / 5.0 - 0.5) < 0.15);
}

TEST_CASE("retraining a minimal architecture beats chance")
{
    // Two informative features entering linearly: separable by one unit.
    const auto data = split_dataset(make_synthetic(SyntheticSpec{1000, 20, 2, 2, 7}), 0.2, 0, true);
    const auto ps = prepare_space(feature_mlp(false));
    const std::vector<double> pi(ps.groups.size(), 0.0);
    const auto ex = export_architecture(ps, pi);
    // A width-1 relu chain can die at init, so average a few seeds.
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto net = materialize(ps, ex.arch, {}, seed);
        auto sc = quick(seed);
        sc.retrain_epochs = 10;
        total += retrain(net.graph, data, sc).final_accuracy;
    }
    CHECK(total / 3.0 > 0.6);
}

TEST_CASE("retrain rejects masked graphs")
{
    const auto ps = prepare_space(feature_mlp(false));
    CHECK_THROWS_AS((void)retrain(ps.graph, features_data(), quick(0)), StructuralError);
}

TEST_CASE("without a penalty the expected cost stays near its start")
{
    const auto& data = features_data();
    const auto ps = prepare_space(feature_mlp(true));
    const auto model = cost_terms(ps.graph, ps.groups);
    const std::vector<double> init(ps.groups.size(), keep_prob(kDefaultLogitInit));
    const double start = expected_cost(model, init);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto st = architecture_learn(ps, model, data, quick(seed));
        const double end = expected_cost(model, st.gates.probabilities());
        CHECK(std::abs(end - start) <= 0.2 * start);
    }
}

TEST_CASE("an overwhelming penalty collapses the gates")
{
    const auto& data = features_data();
    const auto ps = prepare_space(feature_mlp(true));
    const auto model = cost_terms(ps.graph, ps.groups);
    auto sc = quick(0);
    sc.lambda = 1.0;
    const auto st = architecture_learn(ps, model, data, sc);
    const auto pi = st.gates.probabilities();
    double mean = 0.0;
    for (double p : pi) {
        mean += p;
    }
    CHECK(mean / static_cast<double>(pi.size()) < 0.05);
}

TEST_CASE("informative inputs keep their gates")
{
    const auto& data = features_data();
    const auto ps = prepare_space(feature_mlp(true));
    const auto model = cost_terms(ps.graph, ps.groups);
    const auto& in_groups = ps.groups.channel_groups[static_cast<std::size_t>(ps.graph.input_id())];
    const std::set<int> informative(data.informative.begin(), data.informative.end());
    REQUIRE(informative.size() == 4);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto sc = quick(seed);
        sc.lambda = 3e-3;
        sc.tau = 0.5;
        sc.search_epochs = 60;
        const auto pi = architecture_learn(ps, model, data, sc).gates.probabilities();
        double signal = 0.0, noise = 0.0;
        for (int f = 0; f < 20; ++f) {
            const double p = pi[static_cast<std::size_t>(in_groups[static_cast<std::size_t>(f)])];
            (informative.count(f) != 0 ? signal : noise) += p;
        }
        CHECK(signal / 4.0 - noise / 16.0 >= 0.3);
    }
}

TEST_CASE("search runs are reproducible")
{
    const auto& data = features_data();
    const auto ps = prepare_space(feature_mlp(true));
    auto sc = quick(3);
    sc.lambda = 1e-3;
    const auto a = run_search(ps, data, sc);
    const auto b = run_search(ps, data, sc);
    CHECK(a.exported.arch == b.exported.arch);
    CHECK(a.learned.gates.logits == b.learned.gates.logits);
    CHECK(a.retrained.final_loss == b.retrained.final_loss);
    CHECK(a.cost == architecture_cost(ps, a.exported.arch, cost_options(sc)));
    CHECK(a.learned.history.epochs.size() == 5);
}

TEST_CASE("random search")
{
    const auto& data = features_data();
    const auto ps = prepare_space(feature_mlp(false));
    auto sc = quick(0);
    sc.retrain_epochs = 1;
    const auto points = random_search(ps, 30, data, sc);
    CHECK(points.size() == 30);
    const auto again = random_search(ps, 30, data, sc);
    for (std::size_t i = 0; i < points.size(); ++i) {
        CHECK(points[i].arch == again[i].arch);
        CHECK(points[i].accuracy == again[i].accuracy);
        CHECK(points[i].cost == architecture_cost(ps, points[i].arch, {}));
        CHECK(points[i].method == "random");
    }
    CHECK_THROWS_AS((void)random_search(ps, 0, data, sc), ConfigError);
}

TEST_CASE("width multiplier baseline point")
{
    const auto& data = features_data();
    const auto ps = prepare_space(feature_mlp(false));
    auto sc = quick(0);
    sc.retrain_epochs = 1;
    const auto full = width_multiplier_baseline(ps, 1.0, data, sc);
    CHECK(full.arch == full_architecture(ps));
    CHECK(full.cost == graph_cost(ps.space.graph));
    const auto half = width_multiplier_baseline(ps, 0.5, data, sc);
    CHECK(half.cost < full.cost);
}

TEST_CASE("l1 baseline")
{
    const auto& data = features_data();
    const auto ps = prepare_space(feature_mlp(false));
    const auto model = cost_terms(ps.graph, ps.groups);
    auto sc = quick(0);
    sc.lambda = 0.0;
    const auto none = l1_baseline(ps, model, data, sc);
    CHECK(none.exported.arch == full_architecture(ps));
    sc.lambda = 1e-2;
    sc.search_epochs = 10;
    const auto strong = l1_baseline(ps, model, data, sc);
    const double full = architecture_cost(ps, full_architecture(ps), {});
    CHECK(architecture_cost(ps, strong.exported.arch, {}) < 0.25 * full);
}

TEST_CASE("sweep")
{
    const auto& data = features_data();
    const auto ps = prepare_space(feature_mlp(true));
    auto sc = quick(0);
    sc.search_epochs = 2;
    sc.retrain_epochs = 1;
    const std::vector<SweepJob> one = {{1e-3, 0, 2}};
    CHECK(pareto_sweep(ps, data, sc, one).size() == 1);

    std::vector<SweepJob> jobs;
    for (double lambda : {1e-4, 1e-2}) {
        for (std::uint64_t seed = 0; seed < 2; ++seed) {
            jobs.push_back({lambda, seed, 2});
        }
    }
    const auto serial = pareto_sweep(ps, data, sc, jobs, 1);
    const auto parallel = pareto_sweep(ps, data, sc, jobs, 3);
    REQUIRE(serial.size() == 4);
    for (std::size_t i = 0; i < serial.size(); ++i) {
        CHECK(serial[i].lambda == jobs[i].lambda);
        CHECK(serial[i].seed == jobs[i].seed);
        CHECK(serial[i].arch == parallel[i].arch);
        CHECK(serial[i].accuracy == parallel[i].accuracy);
    }
    CHECK_THROWS_AS((void)pareto_sweep(ps, data, sc, std::vector<SweepJob>{}), ConfigError);
}

TEST_CASE("negative lambda is rejected")
{
    const auto ps = prepare_space(feature_mlp(false));
    const auto model = cost_terms(ps.graph, ps.groups);
    auto sc = quick(0);
    sc.lambda = -1.0;
    CHECK_THROWS_AS((void)architecture_learn(ps, model, features_data(), sc), ConfigError);
}

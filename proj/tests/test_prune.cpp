#include <doctest.h>

#include <vector>

#include "gatenas/executor.hpp"
#include "gatenas/graph.hpp"
#include "gatenas/prune.hpp"

using namespace gatenas;

namespace {

struct Chain {
    NetworkGraph g;
    NodeId a = 0, b = 0;
};

Chain dense_chain()
{
    Chain c;
    const auto in = c.g.add_input("in", Shape{3, 1, 1});
    c.a = c.g.add_dense("a", in, 4);
    const auto r = c.g.add_relu("r", c.a);
    c.b = c.g.add_dense("b", r, 2);
    c.g.add_softmax_xent("loss", c.b);
    auto rng = make_rng(3, Stream::kInit);
    c.g.initialize_parameters(rng);
    return c;
}

} // namespace

TEST_CASE("keeping a subset of dense units slices rows and columns")
{
    auto c = dense_chain();
    PrunePlan plan;
    plan.keep[c.a] = {0, 2};
    const auto res = apply_prune(c.g, plan);
    const auto na = res.new_id[static_cast<std::size_t>(c.a)];
    const auto nb = res.new_id[static_cast<std::size_t>(c.b)];
    REQUIRE(na >= 0);
    REQUIRE(nb >= 0);
    CHECK(res.graph.node(na).units == 2);
    CHECK(res.kept[static_cast<std::size_t>(c.a)] == std::vector<int>{0, 2});
    const auto& wa = c.g.node(c.a).find_param("weight")->value;
    const auto& pa = res.graph.node(na).find_param("weight")->value;
    REQUIRE(pa.size() == 6);
    for (int i = 0; i < 3; ++i) {
        CHECK(pa[static_cast<std::size_t>(i)] == wa[static_cast<std::size_t>(i)]);
        CHECK(pa[static_cast<std::size_t>(3 + i)] == wa[static_cast<std::size_t>(6 + i)]);
    }
    const auto& wb = c.g.node(c.b).find_param("weight")->value;
    const auto& pb = res.graph.node(nb).find_param("weight")->value;
    REQUIRE(pb.size() == 4);
    CHECK(pb[0] == wb[0]);
    CHECK(pb[1] == wb[2]);
    CHECK(pb[2] == wb[4]);
    CHECK(pb[3] == wb[6]);
}

TEST_CASE("pruned network equals zeroing the dropped units")
{
    auto c = dense_chain();
    PrunePlan plan;
    plan.keep[c.a] = {1, 3};
    const auto res = apply_prune(c.g, plan);
    auto zeroed = c.g;
    auto& w = zeroed.node(c.a).find_param("weight")->value;
    auto& bias = zeroed.node(c.a).find_param("bias")->value;
    for (int u : {0, 2}) {
        for (int i = 0; i < 3; ++i) {
            w[static_cast<std::size_t>(u * 3 + i)] = 0.0;
        }
        bias[static_cast<std::size_t>(u)] = 0.0;
    }
    Tensor x({2, 3, 1, 1});
    x.data = {0.3, -1.0, 2.0, 1.0, 0.5, -0.2};
    Executor e1(res.graph), e2(zeroed);
    e1.forward(x, {}, Mode::kEval);
    e2.forward(x, {}, Mode::kEval);
    CHECK(e1.output().data == e2.output().data);
}

TEST_CASE("removing one concat branch")
{
    NetworkGraph g;
    const auto in = g.add_input("in", Shape{2, 4, 4});
    const auto a = g.add_conv("a", in, 3, 1);
    const auto b = g.add_conv("b", in, 5, 1);
    const auto cat = g.add_concat("cat", {a, b});
    const auto p = g.add_conv("p", cat, 4, 1);
    const auto gp = g.add_global_pool("gap", p);
    const auto fc = g.add_dense("fc", gp, 2);
    g.add_softmax_xent("loss", fc);
    PrunePlan plan;
    plan.remove.insert(a);
    const auto res = apply_prune(g, plan);
    CHECK(res.removed[static_cast<std::size_t>(a)]);
    CHECK(res.new_id[static_cast<std::size_t>(a)] == -1);
    const auto np = res.new_id[static_cast<std::size_t>(p)];
    REQUIRE(np >= 0);
    CHECK(res.graph.node(res.graph.node(np).inputs[0]).shape.channels == 5);
    CHECK(res.graph.node(np).find_param("weight")->value.size() == 4 * 5);
    CHECK(res.graph.parameter_count() < g.parameter_count());
}

TEST_CASE("empty plan is the identity")
{
    auto c = dense_chain();
    const auto res = apply_prune(c.g, PrunePlan{});
    auto doc = graph_to_json(res.graph);
    // Pruning records the (here complete) input selection explicitly.
    CHECK(doc["nodes"][0]["input_select"] == nlohmann::json::array({0, 1, 2}));
    doc["nodes"][0].erase("input_select");
    CHECK(doc == graph_to_json(c.g));
}

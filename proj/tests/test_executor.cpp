#include <doctest.h>

#include <cmath>
#include <vector>

#include "gatenas/errors.hpp"
#include "gatenas/executor.hpp"
#include "gatenas/gates.hpp"
#include "gatenas/gradcheck.hpp"
#include "gatenas/graph.hpp"
#include "gatenas/spaces.hpp"

using namespace gatenas;

namespace {

constexpr double kMlpLossPin = 0.85107604833360695;

Tensor features(int n, int c, std::vector<double> values)
{
    Tensor t({n, c, 1, 1});
    t.data = std::move(values);
    return t;
}

// input(4) -> dense(4) [-> mask] [-> loss], identity weights.
NetworkGraph identity_dense(bool with_loss)
{
    NetworkGraph g;
    const auto in = g.add_input("in", Shape{4, 1, 1});
    const auto d = g.add_dense("d", in, 4);
    auto& w = g.node(d).find_param("weight")->value;
    for (int i = 0; i < 4; ++i) {
        w[static_cast<std::size_t>(i * 4 + i)] = 1.0;
    }
    const auto m = g.add_mask("m", d);
    g.node(m).mask_groups = {0, 1, 2, 3};
    if (with_loss) {
        g.add_softmax_xent("loss", m);
    }
    return g;
}

double softmax_xent(const std::vector<double>& z, int label)
{
    double mx = z[0];
    for (double v : z) {
        mx = std::max(mx, v);
    }
    double s = 0.0;
    for (double v : z) {
        s += std::exp(v - mx);
    }
    return std::log(s) + mx - z[static_cast<std::size_t>(label)];
}

} // namespace

TEST_CASE("identity dense passes input through")
{
    auto g = identity_dense(false);
    Executor ex(g);
    const auto x = features(2, 4, {1, -2, 3, 0.5, 0, 7, -1, 2});
    const std::vector<double> ones(4, 1.0);
    ex.forward(x, {}, Mode::kEval, ones);
    CHECK(ex.output().data == x.data);
}

TEST_CASE("zero mask annihilates the output")
{
    auto g = identity_dense(true);
    Executor ex(g);
    const auto x = features(2, 4, {1, -2, 3, 0.5, 0, 7, -1, 2});
    const std::vector<int> labels = {2, 0};
    const std::vector<double> zeros(4, 0.0);
    const double loss = ex.forward(x, labels, Mode::kEval, zeros);
    for (double v : ex.activation(g.id_of("m")).data) {
        CHECK(v == 0.0);
    }
    CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-15));
}

TEST_CASE("missing mask values are rejected")
{
    auto g = identity_dense(false);
    Executor ex(g);
    const auto x = features(1, 4, {1, 2, 3, 4});
    const std::vector<double> short_masks(2, 1.0);
    CHECK_THROWS_AS(ex.forward(x, {}, Mode::kEval, short_masks), ConfigError);
}

TEST_CASE("two-layer mlp loss matches a scalar reimplementation")
{
    NetworkGraph g;
    const auto in = g.add_input("in", Shape{3, 1, 1});
    const auto h = g.add_dense("h", in, 4);
    const auto r = g.add_relu("r", h);
    const auto o = g.add_dense("o", r, 2);
    g.add_softmax_xent("loss", o);
    auto rng = make_rng(42, Stream::kInit);
    g.initialize_parameters(rng);
    // Non-zero biases so the bias path is exercised.
    for (auto* name : {"h", "o"}) {
        for (auto& b : g.node(g.id_of(name)).find_param("bias")->value) {
            b = rng.uniform(-0.5, 0.5);
        }
    }
    const auto x = features(4, 3, {0.5, -1.0, 2.0, 1.5, 0.25, -0.75, -2.0, 1.0, 0.0, 0.3, 0.6, -0.9});
    const std::vector<int> labels = {0, 1, 1, 0};

    Executor ex(g);
    const double loss = ex.forward(x, labels, Mode::kEval);

    const auto& w1 = g.node(h).find_param("weight")->value;
    const auto& b1 = g.node(h).find_param("bias")->value;
    const auto& w2 = g.node(o).find_param("weight")->value;
    const auto& b2 = g.node(o).find_param("bias")->value;
    double ref = 0.0;
    for (int n = 0; n < 4; ++n) {
        std::vector<double> hidden(4);
        for (int j = 0; j < 4; ++j) {
            double s = b1[static_cast<std::size_t>(j)];
            for (int i = 0; i < 3; ++i) {
                s += w1[static_cast<std::size_t>(j * 3 + i)] * x[static_cast<std::size_t>(n * 3 + i)];
            }
            hidden[static_cast<std::size_t>(j)] = std::max(0.0, s);
        }
        std::vector<double> z(2);
        for (int k = 0; k < 2; ++k) {
            double s = b2[static_cast<std::size_t>(k)];
            for (int j = 0; j < 4; ++j) {
                s += w2[static_cast<std::size_t>(k * 4 + j)] * hidden[static_cast<std::size_t>(j)];
            }
            z[static_cast<std::size_t>(k)] = s;
        }
        ref += softmax_xent(z, labels[static_cast<std::size_t>(n)]);
    }
    ref /= 4.0;
    CHECK(loss == doctest::Approx(ref).epsilon(1e-12));
    // Regression pin for the seeded initialisation.
    CHECK(loss == doctest::Approx(kMlpLossPin).epsilon(1e-12));
}

TEST_CASE("linear logit gradient")
{
    // z = (w0 x, w1 x) with x = 2; dL/dw_k = (p_k - [k == y]) * x.
    NetworkGraph g;
    const auto in = g.add_input("in", Shape{1, 1, 1});
    const auto d = g.add_dense("d", in, 2);
    g.node(d).find_param("weight")->value = {0.3, -0.2};
    g.add_softmax_xent("loss", d);
    Executor ex(g);
    const std::vector<int> labels = {0};
    ex.forward(features(1, 1, {2.0}), labels, Mode::kTrain);
    const auto grads = ex.backward();
    const double e0 = std::exp(0.6), e1 = std::exp(-0.4);
    const double p0 = e0 / (e0 + e1);
    const auto& gw = grads.params[static_cast<std::size_t>(d)][0];
    CHECK(gw[0] == doctest::Approx((p0 - 1.0) * 2.0).epsilon(1e-14));
    CHECK(gw[1] == doctest::Approx((1.0 - p0) * 2.0).epsilon(1e-14));
    const auto& gb = grads.params[static_cast<std::size_t>(d)][1];
    CHECK(gb[0] == doctest::Approx(p0 - 1.0).epsilon(1e-14));
}

TEST_CASE("backward before forward is a state error")
{
    auto g = identity_dense(true);
    Executor ex(g);
    CHECK_THROWS_AS((void)ex.backward(), StateError);
}

TEST_CASE("gate logit gradient on a one-unit graph")
{
    // dL/dnu = dL/dm * m(1-m)/tau, against central differences in nu.
    NetworkGraph g;
    const auto in = g.add_input("in", Shape{1, 1, 1});
    const auto a = g.add_dense("a", in, 1);
    g.node(a).find_param("weight")->value = {0.8};
    g.node(a).find_param("bias")->value = {0.1};
    const auto m = g.add_mask("m", a);
    g.node(m).mask_groups = {0};
    const auto o = g.add_dense("o", m, 2);
    g.node(o).find_param("weight")->value = {1.3, -0.7};
    g.add_softmax_xent("loss", o);

    const double tau = 0.5, ell = 0.2;
    double nu = 0.4;
    const auto x = features(1, 1, {1.5});
    const std::vector<int> labels = {1};
    Executor ex(g);
    auto loss_at = [&] {
        const std::vector<double> mv = {relaxed_mask(nu, ell, tau)};
        return ex.forward(x, labels, Mode::kTrain, mv);
    };
    const double mhat = relaxed_mask(nu, ell, tau);
    loss_at();
    const double analytic = ex.backward().masks[0] * relaxed_mask_grad(mhat, tau);
    // Symbolic form: dL/d(m a) * a * m(1-m)/tau.
    const double act = 0.8 * 1.5 + 0.1;
    const double z0 = 1.3 * mhat * act, z1 = -0.7 * mhat * act;
    const double p1 = std::exp(z1) / (std::exp(z0) + std::exp(z1));
    const double dl_dma = (1.0 - p1) * 1.3 + (p1 - 1.0) * -0.7;
    CHECK(analytic == doctest::Approx(dl_dma * act * mhat * (1.0 - mhat) / tau).epsilon(1e-12));

    std::vector<Coordinate> coords = {{"nu", &nu, analytic, false}};
    const auto report = finite_difference_check(loss_at, coords, 1e-4);
    CHECK(report.checked == 1);
    CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("all-ones masks equal the unmasked graph exactly")
{
    SpaceConfig cfg;
    cfg.kind = SpaceKind::kOneShotCell;
    cfg.cells = 1;
    cfg.blocks = 2;
    cfg.base_width = 4;
    cfg.input = Shape{2, 6, 6};
    cfg.classes = 3;
    auto ps = prepare_space(cfg);
    auto rng = make_rng(1, Stream::kInit);
    ps.space.graph.initialize_parameters(rng);
    // Copy the parameters node by node into the masked graph.
    for (auto& node : ps.graph.nodes()) {
        if (node.kind == NodeKind::kMask) {
            continue;
        }
        const auto& src = ps.space.graph.node(ps.space.graph.id_of(node.name));
        node.params = src.params;
        node.buffers = src.buffers;
    }
    Tensor x({3, 2, 6, 6});
    auto drng = make_rng(2, Stream::kData);
    for (auto& v : x.data) {
        v = drng.normal();
    }
    const std::vector<int> labels = {0, 1, 2};
    const std::vector<double> ones(ps.groups.size(), 1.0);
    for (auto mode : {Mode::kTrain, Mode::kEval}) {
        Executor a(ps.graph), b(ps.space.graph);
        const double la = a.forward(x, labels, mode, ones);
        const double lb = b.forward(x, labels, mode);
        CHECK(la == lb);
        CHECK(a.output().data == b.output().data);
    }
}

TEST_CASE("identical seeds give identical losses")
{
    auto run = [] {
        SpaceConfig cfg;
        cfg.kind = SpaceKind::kMlp;
        cfg.input = Shape{5, 1, 1};
        cfg.base_width = 6;
        cfg.classes = 3;
        auto space = build_space(cfg);
        auto rng = make_rng(9, Stream::kInit);
        space.graph.initialize_parameters(rng);
        Tensor x({4, 5, 1, 1});
        for (auto& v : x.data) {
            v = rng.normal();
        }
        const std::vector<int> labels = {0, 1, 2, 1};
        Executor ex(space.graph);
        return ex.forward(x, labels, Mode::kTrain);
    };
    CHECK(run() == run());
}

TEST_CASE("finite differences on a linear function")
{
    double a = 0.7, b = -1.2;
    auto f = [&] { return 3.0 * a - 2.0 * b + 1.0; };
    std::vector<Coordinate> coords = {{"a", &a, 3.0, false}, {"b", &b, -2.0, false}};
    const auto report = finite_difference_check(f, coords, 1e-4);
    CHECK(report.checked == 2);
    CHECK(report.max_rel_error < 1e-9);
    CHECK(a == 0.7);
    CHECK(b == -1.2);
}

TEST_CASE("saturated gate coordinate is skipped with a warning")
{
    double nu = 0.3;
    const double tau = 1e-6;
    const double m = relaxed_mask(nu, 0.0, tau);
    CHECK(gate_saturated(m));
    CHECK_FALSE(gate_saturated(relaxed_mask(nu, 0.0, 0.5)));
    auto f = [&] { return relaxed_mask(nu, 0.0, tau); };
    std::vector<Coordinate> coords = {{"nu", &nu, relaxed_mask_grad(m, tau), gate_saturated(m)}};
    const auto report = finite_difference_check(f, coords, 1e-4);
    CHECK(report.checked == 0);
    CHECK(report.skipped == 1);
    CHECK_FALSE(report.warnings.empty());
}

#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "gatenas/config.hpp"
#include "gatenas/errors.hpp"
#include "gatenas/optimizer.hpp"

using namespace gatenas;

TEST_CASE("first step from zero state")
{
    std::vector<double> p = {0.5};
    const std::vector<double> g = {1.0};
    OptimizerState st;
    st.config.learning_rate = 0.1;
    st.config.weight_decay = 0.0;
    const std::vector<ParamSlot> slots = {{"w", p, g, true}};
    adam_step(slots, st);
    CHECK(p[0] - 0.5 == doctest::Approx(-0.05).epsilon(1e-14));
    CHECK(st.step == 1);
}

TEST_CASE("first step closed form for several gradients")
{
    for (double g0 : {-3.0, -0.2, 0.01, 7.5}) {
        std::vector<double> p = {0.0};
        const std::vector<double> g = {g0};
        OptimizerState st;
        st.config.learning_rate = 0.03;
        st.config.weight_decay = 0.0;
        const std::vector<ParamSlot> slots = {{"w", p, g, false}};
        adam_step(slots, st);
        CHECK(p[0] == doctest::Approx(-0.03 * g0 / (std::abs(g0) + 1.0)).epsilon(1e-13));
    }
}

TEST_CASE("zero gradient and zero decay leave parameters unchanged")
{
    std::vector<double> p = {1.0, -2.0, 3.0};
    const std::vector<double> g(3, 0.0);
    OptimizerState st;
    st.config.weight_decay = 0.0;
    const std::vector<ParamSlot> slots = {{"w", p, g, true}};
    for (int i = 0; i < 5; ++i) {
        adam_step(slots, st);
    }
    CHECK(p == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("weight decay applies only to flagged slots")
{
    std::vector<double> a = {2.0}, b = {2.0};
    const std::vector<double> g = {0.0};
    OptimizerState st;
    st.config.learning_rate = 0.1;
    st.config.weight_decay = 0.01;
    const std::vector<ParamSlot> slots = {{"a", a, g, true}, {"b", b, g, false}};
    adam_step(slots, st);
    CHECK(a[0] == doctest::Approx(2.0 - 0.1 * 0.01 * 2.0).epsilon(1e-14));
    CHECK(b[0] == 2.0);
}

TEST_CASE("second step uses bias-corrected moments")
{
    std::vector<double> p = {0.0};
    std::vector<double> g = {1.0};
    OptimizerState st;
    st.config.learning_rate = 0.1;
    st.config.weight_decay = 0.0;
    const std::vector<ParamSlot> slots = {{"w", p, g, false}};
    adam_step(slots, st);
    const double after_one = p[0];
    g[0] = -2.0;
    adam_step(slots, st);
    const double m = 0.9 * 0.1 * 1.0 + 0.1 * -2.0;
    const double v = 0.999 * 0.001 * 1.0 + 0.001 * 4.0;
    const double mhat = m / (1.0 - 0.81);
    const double vhat = v / (1.0 - 0.999 * 0.999);
    CHECK(p[0] - after_one == doctest::Approx(-0.1 * mhat / (std::sqrt(vhat) + 1.0)).epsilon(1e-12));
}

TEST_CASE("non-finite gradient throws before any update")
{
    std::vector<double> a = {1.0}, b = {1.0};
    const std::vector<double> ga = {0.5};
    const std::vector<double> gb = {std::numeric_limits<double>::quiet_NaN()};
    OptimizerState st;
    const std::vector<ParamSlot> slots = {{"a", a, ga, false}, {"b", b, gb, false}};
    CHECK_THROWS_AS(adam_step(slots, st), NumericError);
    CHECK(a[0] == 1.0);
    CHECK(st.step == 0);
}

TEST_CASE("defaults when the config omits optimizer keys")
{
    const auto cfg = parse_config("[search]\nlambda = 0.001\n", ".");
    CHECK(cfg.search.beta1 == 0.9);
    CHECK(cfg.search.beta2 == 0.999);
    CHECK(cfg.search.epsilon == 1.0);
    const auto adam = adam_config(cfg.search);
    CHECK(adam.beta1 == 0.9);
    CHECK(adam.beta2 == 0.999);
    CHECK(adam.epsilon == 1.0);
}

TEST_CASE("exponential learning rate schedule")
{
    CHECK(scheduled_learning_rate(0.1, 0.5, 2.0, 0.0) == 0.1);
    CHECK(scheduled_learning_rate(0.1, 0.5, 2.0, 2.0) == doctest::Approx(0.05).epsilon(1e-14));
    CHECK(scheduled_learning_rate(0.1, 0.5, 2.0, 1.0) == doctest::Approx(0.1 / std::sqrt(2.0)).epsilon(1e-14));
}

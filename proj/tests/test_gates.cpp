#include <doctest.h>

#include <cmath>
#include <vector>

#include "gatenas/errors.hpp"
#include "gatenas/gates.hpp"

using namespace gatenas;

TEST_CASE("logistic transform of fixed uniforms")
{
    CHECK(logistic_from_uniform(0.5).ell == 0.0);
    CHECK(logistic_from_uniform(0.75).ell == doctest::Approx(std::log(3.0)).epsilon(1e-15));
    CHECK(logistic_from_uniform(0.25).ell == doctest::Approx(-std::log(3.0)).epsilon(1e-15));
    // Clamped ends stay finite.
    CHECK(std::isfinite(logistic_from_uniform(0.0).ell));
    CHECK(std::isfinite(logistic_from_uniform(1.0).ell));
    CHECK(logistic_from_uniform(0.0).u == kUniformClamp);
}

TEST_CASE("relaxed mask values")
{
    CHECK(relaxed_mask(0.0, 0.0, 1.0) == 0.5);
    CHECK(relaxed_mask(0.0, std::log(3.0), 1.0) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(relaxed_mask(2.5, 0.0, 0.001) == 1.0);
    CHECK(relaxed_mask(-2.5, 0.0, 0.001) < 1e-300);
    CHECK_THROWS_AS((void)relaxed_mask(0.0, 0.0, 0.0), ConfigError);
}

TEST_CASE("keep probability")
{
    CHECK(keep_prob(0.0) == 0.5);
    CHECK(keep_prob(2.5) == doctest::Approx(0.92).epsilon(0.005));
    // 1 / (1 + e^2.5) = 0.075858180...
    CHECK(keep_prob(-2.5) == doctest::Approx(0.0758581800212435).epsilon(1e-13));
    CHECK(keep_prob(kDefaultLogitInit) == keep_prob(2.5));
}

TEST_CASE("hard samples")
{
    Rng rng(17);
    int ones = 0;
    for (int i = 0; i < 10000; ++i) {
        ones += hard_sample(50.0, rng);
    }
    CHECK(ones == 10000);

    const int n = 100000;
    long total = 0;
    for (int i = 0; i < n; ++i) {
        total += hard_sample(0.0, rng);
    }
    const double mean = static_cast<double>(total) / n;
    CHECK(std::abs(mean - 0.5) <= 3.0 * std::sqrt(0.25 / n));
}

TEST_CASE("threshold law matches hard samples")
{
    const int n = 100000;
    for (double nu : {-1.0, 0.7}) {
        for (double tau : {2.0, 0.01}) {
            Rng rng(23);
            int above = 0;
            for (int i = 0; i < n; ++i) {
                above += relaxed_mask(nu, sample_logistic(rng).ell, tau) > 0.5 ? 1 : 0;
            }
            const double pi = keep_prob(nu);
            CHECK(std::abs(static_cast<double>(above) / n - pi) <= 3.0 * std::sqrt(pi * (1.0 - pi) / n));
        }
    }
}

TEST_CASE("relaxed mask is increasing in logit and noise")
{
    const double tau = 0.3;
    double prev = 0.0;
    for (int i = -20; i <= 20; ++i) {
        const double m = relaxed_mask(0.1 * i, 0.2, tau);
        CHECK(m > prev);
        prev = m;
    }
    prev = 0.0;
    for (int i = -20; i <= 20; ++i) {
        const double m = relaxed_mask(-0.4, 0.1 * i, tau);
        CHECK(m > prev);
        prev = m;
    }
}

TEST_CASE("mask gradient identity against finite differences")
{
    const double h = 1e-5;
    for (double tau : {0.1, 0.5, 1.0}) {
        for (double nu : {-1.5, 0.0, 0.8}) {
            for (double ell : {-0.3, 0.4}) {
                const double m = relaxed_mask(nu, ell, tau);
                const double fd = (relaxed_mask(nu + h, ell, tau) - relaxed_mask(nu - h, ell, tau)) / (2.0 * h);
                const double a = relaxed_mask_grad(m, tau);
                CHECK(a == doctest::Approx(m * (1.0 - m) / tau).epsilon(1e-15));
                CHECK(std::abs(a - fd) / std::abs(a) < 1e-4);
            }
        }
    }
}

TEST_CASE("noise is determined by the seed")
{
    GateSet gates(8, kDefaultLogitInit, 0.5);
    Rng a(99), b(99), c(100);
    const auto na = gates.sample_noise(a);
    CHECK(na == gates.sample_noise(b));
    CHECK(na != gates.sample_noise(c));
    CHECK(gates.hard(a) == gates.hard(b));
}

TEST_CASE("gate set queries")
{
    GateSet gates(3, 0.0, 1.0);
    gates.logits = {-1.0, 0.0, 2.0};
    const auto pi = gates.probabilities();
    CHECK(pi[0] == keep_prob(-1.0));
    CHECK(pi[2] == keep_prob(2.0));
    CHECK(gates.most_likely() == std::vector<double>{0.0, 0.0, 1.0});
    const std::vector<double> noise = {0.0, std::log(3.0), 0.0};
    const auto m = gates.relaxed(noise);
    CHECK(m[1] == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("gate json round trip")
{
    GateSet gates(4, 0.0, 0.25);
    gates.logits = {0.1, -2.0, 3.5, 1e-9};
    const auto back = gates_from_json(gates_to_json(gates));
    CHECK(back.logits == gates.logits);
    CHECK(back.tau == gates.tau);
    const auto pj = probabilities_to_json(gates.probabilities());
    CHECK(pj.size() == 4);
}

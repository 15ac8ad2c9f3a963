#include "improvolve/aci_problem.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace improvolve;
using namespace improvolve::aci;

namespace {

std::vector<double> double_loop(const std::vector<double>& f) {
    std::vector<double> g(2 * f.size() - 1, 0.0);
    for (std::size_t i = 0; i < f.size(); ++i) {
        for (std::size_t j = 0; j < f.size(); ++j) g[i + j] += f[i] * f[j];
    }
    return g;
}

double oracle_c(const std::vector<double>& f) {
    const auto g = double_loop(f);
    double l1 = 0, l2 = 0, linf = 0;
    for (double v : g) {
        l1 += v;
        l2 += v * v;
        linf = std::max(linf, v);
    }
    return l2 / (l1 * linf);
}

double uniform_closed_form(double N) { return (2 * (N - 1) * N * (2 * N - 1) / 6 + N * N) / (N * N * N); }

std::vector<double> random_function(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> f(n);
    for (auto& v : f) v = u(rng) < 0.2 ? 0.0 : u(rng);
    f[n / 2] += 0.1;
    return f;
}

} // namespace

TEST_CASE("autoconvolution examples") {
    CHECK(autoconvolve(std::vector<double>{1}) == std::vector<double>{1});
    CHECK(autoconvolve(std::vector<double>{1, 1}) == std::vector<double>{1, 2, 1});
    CHECK(autoconvolve(std::vector<double>{0, 2, 0}) == std::vector<double>{0, 0, 4, 0, 0});
}

TEST_CASE("fitness examples") {
    CHECK(fitness({{1}}).c_value == 1.0);
    const auto r = fitness({{1, 1}});
    CHECK(r.c_value == 0.75);
    CHECK(r.l1 == 4);
    CHECK(r.l2_sq == 6);
    CHECK(r.linf == 2);
    for (std::size_t N : {2, 3, 4, 64}) {
        const std::vector<double> ones(N, 1.0);
        CHECK(fitness({ones}).c_value == doctest::Approx(uniform_closed_form(N)).epsilon(1e-14));
        CHECK(oracle_c(ones) == doctest::Approx(uniform_closed_form(N)).epsilon(1e-14));
    }
    CHECK(std::abs(fitness({std::vector<double>(4096, 1.0)}).c_value - uniform_closed_form(4096)) < 1e-12);
}

TEST_CASE("invalid functions are rejected") {
    CHECK_THROWS_WITH_AS(check_valid(std::vector<double>{1, -1}), doctest::Contains("negative sample"), MalformedSolution);
    CHECK_THROWS_AS(check_valid(std::vector<double>{0, 0}), MalformedSolution);
    CHECK_THROWS_AS(check_valid(std::vector<double>{}), MalformedSolution);
    CHECK_THROWS_AS(check_valid(std::vector<double>{1, NAN}), MalformedSolution);
    CHECK_THROWS_AS(fitness({{0, 0, 0}}), MalformedSolution);
}

TEST_CASE("fast and direct autoconvolution agree with the double loop") {
    std::mt19937_64 rng(8);
    for (std::size_t n : {1, 2, 7, 64, 255, 256, 257, 1000}) {
        const auto f = random_function(rng, n);
        const auto ref = double_loop(f);
        const auto direct = autoconvolve_direct(f);
        const auto fast = autoconvolve_fft(f);
        const auto dispatch = autoconvolve(f);
        REQUIRE(fast.size() == ref.size());
        const double peak = *std::max_element(ref.begin(), ref.end());
        for (std::size_t k = 0; k < ref.size(); ++k) {
            CHECK(direct[k] == doctest::Approx(ref[k]).epsilon(1e-13));
            CHECK(std::abs(fast[k] - ref[k]) <= 1e-10 * peak);
            CHECK(fast[k] >= 0.0);
            if (n <= 256) CHECK(dispatch[k] == doctest::Approx(ref[k]).epsilon(1e-13));
        }
    }
}

TEST_CASE("C is scale and reflection invariant and bounded by one") {
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<std::size_t> len(2, 400);
    for (int trial = 0; trial < 1000; ++trial) {
        auto f = random_function(rng, len(rng));
        const double c = fitness({f}).c_value;
        CHECK(c <= 1.0);
        CHECK(c > 0.0);
        for (double s : {1e-6, 3.0, 1e6}) {
            auto g = f;
            for (auto& v : g) v *= s;
            CHECK(std::abs(fitness({g}).c_value - c) < 1e-12);
        }
        std::reverse(f.begin(), f.end());
        CHECK(std::abs(fitness({f}).c_value - c) < 1e-12);
    }
}

TEST_CASE("generate") {
    const auto f = generate(1024, 0);
    CHECK(f.size() == 1024);
    CHECK_NOTHROW(check_valid(f.values));
    CHECK(fitness(f).c_value >= 0.5);
    CHECK(generate(1024, 0) == f);
    CHECK_NOTHROW(check_valid(generate(16, 7).values));
    CHECK(generate(16, 7).size() == 16);
    CHECK_THROWS_AS(generate(15, 0), InvalidArgument);
}

TEST_CASE("smoothed objective gradient matches finite differences") {
    std::mt19937_64 rng(64);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int point = 0; point < 10; ++point) {
        std::vector<double> u(64);
        for (auto& v : u) v = noise(rng);
        for (double beta : {1e2, 1e3}) {
            std::vector<double> grad(u.size());
            smooth_ratio(u, beta, grad);
            for (std::size_t i = 0; i < u.size(); ++i) {
                auto up = u, down = u;
                up[i] += 1e-6;
                down[i] -= 1e-6;
                const double fd = (smooth_ratio(up, beta, {}) - smooth_ratio(down, beta, {})) / 2e-6;
                const double scale = std::max(std::abs(fd), 1e-3 * std::abs(smooth_ratio(u, beta, {})));
                CHECK(std::abs(grad[i] - fd) <= 1e-4 * scale);
            }
        }
    }
}

TEST_CASE("resolution ladders") {
    const ImproveParams standard;
    CHECK(resolution_ladder(1024, standard) == std::vector<std::size_t>{1024, 2048, 4096, 8192});
    CHECK(resolution_ladder(600, standard) == std::vector<std::size_t>{600, 2048, 4096, 8192});
    auto ext = improve_params_for(GridMode::extended);
    ext.resolution_cap = 8000;
    CHECK(resolution_ladder(1000, ext) == std::vector<std::size_t>{1000, 2000, 4000, 8000});
}

TEST_CASE("improve lifts the uniform plateau and is monotone") {
    const StepFunction flat{std::vector<double>(1024, 1.0)};
    ImproveParams p;
    p.iterations_per_stage = 300;
    const auto out = improve(flat, p);
    CHECK_NOTHROW(check_valid(out.values));
    CHECK(fitness(out).c_value >= 0.80);

    // A second pass from an optimized function cannot lose fitness.
    const auto again = improve(out, p);
    CHECK(fitness(again).c_value >= fitness(out).c_value - 1e-12);
}

TEST_CASE("improve handles a padded impulse") {
    std::vector<double> v(64, 0.0);
    v[20] = 1.0;
    const StepFunction impulse{v};
    const double before = oracle_c(v);
    CHECK(before == doctest::Approx(1.0));
    ImproveParams p;
    p.iterations_per_stage = 50;
    const auto out = improve(impulse, p);
    CHECK(fitness(out).c_value >= before - 1e-12);
}

TEST_CASE("perturb") {
    const auto f = generate(512, 3);
    const auto tiny = perturb(f, 1e-3, 1);
    CHECK(tiny == perturb(f, 1e-3, 1));
    CHECK(tiny.size() == f.size());
    CHECK(std::abs(fitness(tiny).c_value - fitness(f).c_value) < 1e-2);
    CHECK_NOTHROW(check_valid(perturb(f, 1.0, 2).values));
    bool length_changed = false;
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto big = perturb(f, 100, s);
        CHECK_NOTHROW(check_valid(big.values));
        length_changed |= big.size() != f.size();
    }
    CHECK(length_changed);
}

TEST_CASE("finalize") {
    const auto f = generate(1024, 1);
    CHECK(finalize(f) == f);
    CHECK(finalize(generate(512, 1)).size() == 1024);
    const StepFunction flat{std::vector<double>(100, 1.0)};
    const auto up = finalize(flat);
    CHECK(up.size() == 1024);
    CHECK(std::abs(fitness(up).c_value - fitness(flat).c_value) < 0.01);
}

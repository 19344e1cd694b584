#include "zecon/error.hpp"
#include "zecon/schedule.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace zecon;

TEST_CASE("linear schedule endpoints and small cases") {
    auto s = make_linear_schedule(1000, 1e-4, 0.02);
    CHECK(s.steps() == 1000);
    CHECK(s.betas().front() == 1e-4);
    CHECK(s.betas().back() == 0.02);

    auto two = make_linear_schedule(2, 0.5, 0.5);
    CHECK(two.alpha_bars()[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(two.alpha_bars()[1] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("alpha_bar matches a running-product oracle") {
    auto s = make_linear_schedule(1000, 1e-4, 0.02);
    long double prod = 1.0L;
    for (std::size_t t = 0; t < s.steps(); ++t) {
        // independent reconstruction of the interpolated betas
        const long double beta = 1e-4L + (0.02L - 1e-4L) * static_cast<long double>(t) / 999.0L;
        prod *= 1.0L - beta;
        CHECK(std::abs(static_cast<double>(prod) - s.alpha_bar(t)) <= 1e-12 * s.alpha_bar(t));
    }
}

TEST_CASE("schedule invariants") {
    auto s = make_linear_schedule(1000, 1e-4, 0.02);
    CHECK(s.alpha_bars()[0] == s.alphas()[0]);
    for (std::size_t t = 1; t < s.steps(); ++t) CHECK(s.alpha_bars()[t] < s.alpha_bars()[t - 1]);
    CHECK(s.alpha_bars().back() > 0.0);
    for (std::size_t t = 0; t < s.steps(); ++t) CHECK(s.alphas()[t] == 1.0 - s.betas()[t]);
}

TEST_CASE("schedule construction errors") {
    CHECK_THROWS_AS(make_linear_schedule(1, 1e-4, 0.02), ValidationError);
    CHECK_THROWS_AS(make_linear_schedule(0, 1e-4, 0.02), ValidationError);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.02), ValidationError);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.03, 0.02), ValidationError);
    CHECK_THROWS_AS(make_linear_schedule(10, 1e-4, 1.0), ValidationError);
    CHECK_THROWS(NoiseSchedule({0.1, 1.5}));
}

TEST_CASE("respace to 50 steps") {
    auto s = make_linear_schedule(1000, 1e-4, 0.02);
    auto r = respace(s, 50);
    REQUIRE(r.steps() == 50);
    for (std::size_t k = 0; k < 50; ++k) CHECK(r.timestep(k) == 20 * k);

    // recompute cumulative products from the respaced betas
    double prod = 1.0;
    for (std::size_t k = 0; k < 50; ++k) {
        prod *= 1.0 - r.betas()[k];
        CHECK(std::abs(prod - s.alpha_bar(r.timestep(k))) <= 1e-12 * s.alpha_bar(r.timestep(k)));
    }
}

TEST_CASE("identity respacing copies betas") {
    auto s = make_linear_schedule(100, 1e-3, 0.05);
    auto r = respace(s, 100);
    for (std::size_t k = 0; k < 100; ++k) CHECK(r.timestep(k) == k);
    CHECK(r.betas() == s.betas());
}

TEST_CASE("respace rejects bad step counts") {
    auto s = make_linear_schedule(100, 1e-3, 0.05);
    CHECK_THROWS_AS(respace(s, 0), ValidationError);
    CHECK_THROWS_AS(respace(s, 101), ValidationError);
}

TEST_CASE("forward_diffuse") {
    auto s = make_linear_schedule(1000, 1e-4, 0.02);
    Tensor x0({1, 2, 2}, {0.1, -0.2, 0.3, 0.4});
    Tensor eps({1, 2, 2}, {1.0, 2.0, -1.0, 0.5});
    const std::size_t t = 417;
    const double ab = s.alpha_bar(t);
    auto xt = forward_diffuse(s, x0, t, eps);
    for (std::size_t i = 0; i < 4; ++i) CHECK(xt[i] == doctest::Approx(std::sqrt(ab) * x0[i] + std::sqrt(1 - ab) * eps[i]));

    auto zero_noise = forward_diffuse(s, x0, t, Tensor::zeros_like(x0));
    for (std::size_t i = 0; i < 4; ++i) CHECK(zero_noise[i] == doctest::Approx(std::sqrt(ab) * x0[i]));

    // hand value: abar = 0.25, x0 = eps = 1
    NoiseSchedule quarter({0.75});
    auto v = forward_diffuse(quarter, Tensor({1}, {1.0}), 0, Tensor({1}, {1.0}));
    CHECK(v[0] == doctest::Approx(0.5 + std::sqrt(0.75)).epsilon(1e-15));

    CHECK_THROWS(forward_diffuse(s, x0, 1000, eps));
    CHECK_THROWS(forward_diffuse(s, x0, 10, Tensor({4})));
}

TEST_CASE("forward_diffuse is linear in x0 and eps") {
    auto s = make_linear_schedule(1000, 1e-4, 0.02);
    Tensor a({3}, {0.1, 0.2, 0.3}), b({3}, {-1.0, 0.5, 2.0}), e1({3}, {0.3, 0.1, -0.4}), e2({3}, {1.0, -2.0, 0.0});
    auto lhs = forward_diffuse(s, a * 2.0 + b, 300, e1 * 2.0 + e2);
    auto rhs = forward_diffuse(s, a, 300, e1) * 2.0 + forward_diffuse(s, b, 300, e2);
    CHECK(max_abs_diff(lhs, rhs) < 1e-14);
}

TEST_CASE("ddpm_sigma") {
    NoiseSchedule hand({0.5, 0.5}); // abar = 0.5, 0.25
    CHECK(ddpm_sigma(hand, 1) == doctest::Approx(std::sqrt(0.5 / 0.75) * std::sqrt(0.5)).epsilon(1e-15));
    CHECK(ddpm_sigma(hand, 1) == doctest::Approx(0.57735).epsilon(1e-5));
    CHECK(ddpm_sigma(hand, 0) == 0.0);
    CHECK_THROWS(ddpm_sigma(hand, 2));

    auto s = make_linear_schedule(1000, 1e-4, 0.02);
    auto r = respace(s, 50);
    for (std::size_t k = 1; k < 50; ++k) {
        const double sig = ddpm_sigma(r, k);
        CHECK(sig <= std::sqrt(1 - r.alpha_bar(k - 1)));
        CHECK(1 - r.alpha_bar(k - 1) - sig * sig >= 0.0);
    }
}

TEST_CASE("schedule spec text round trip") {
    ScheduleSpec spec{1000, 1e-4, 0.02, 50};
    auto back = ScheduleSpec::from_text(spec.to_text());
    CHECK(back == spec);

    auto path = std::filesystem::temp_directory_path() / "zecon_schedule_test.txt";
    spec.save(path);
    CHECK(ScheduleSpec::load(path) == spec);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(ScheduleSpec::from_text("T = 10\nbogus = 3\n"), ValidationError);
    CHECK_THROWS_AS(ScheduleSpec::from_text("T = 10\nT_prime = 20\n"), ValidationError);
    auto parsed = ScheduleSpec::from_text("# comment\nT = 100\nT_prime = 10\n");
    CHECK(parsed.steps == 100);
    CHECK(parsed.respaced_steps == 10);
    CHECK(parsed.build().index_map()[1] == 10);
}

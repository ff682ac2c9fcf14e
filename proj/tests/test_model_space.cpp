#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "mbvbi/model_space.hpp"

using namespace mbvbi;

namespace {

CoarseEstimate two_path_coarse() {
    CoarseEstimate c;
    c.k_hat = 2;
    c.tau_hat_s = {100e-9, 200e-9};
    c.interval_half_width_s = {25e-9, 25e-9};
    c.alpha_hat = {cplx{0.9, 0.0}, cplx{0.4, 0.0}};
    c.phi_rel_hat = {0.0};
    c.delta_hat_s = {0.0, 0.0};
    return c;
}

std::vector<double> seeds_ns(const CandidateModel& m) {
    std::vector<double> s;
    for (double t : m.tau_seeds_s) s.push_back(t * 1e9);
    return s;
}

}  // namespace

TEST_CASE("build_candidates: unsplit plus one split per ranked path") {
    const auto models = build_candidates(two_path_coarse(), 2, 25e-9);
    REQUIRE(models.size() == 3);

    CHECK(models[0].id == 1);
    CHECK_FALSE(models[0].split_origin.has_value());
    CHECK(seeds_ns(models[0]) == std::vector<double>{100.0, 200.0});

    REQUIRE(models[1].split_origin.has_value());
    CHECK(*models[1].split_origin == 0);
    CHECK(models[1].k == 3);
    const auto s1 = seeds_ns(models[1]);
    REQUIRE(s1.size() == 3);
    CHECK(s1[0] == doctest::Approx(75.0));
    CHECK(s1[1] == doctest::Approx(125.0));
    CHECK(s1[2] == doctest::Approx(200.0));

    REQUIRE(models[2].split_origin.has_value());
    CHECK(*models[2].split_origin == 1);
    const auto s2 = seeds_ns(models[2]);
    CHECK(s2[0] == doctest::Approx(100.0));
    CHECK(s2[1] == doctest::Approx(175.0));
    CHECK(s2[2] == doctest::Approx(225.0));

    SUBCASE("split models inherit the parent half-width") {
        for (double hw : models[1].interval_half_width_s)
            CHECK(hw == doctest::Approx(25e-9));
    }

    SUBCASE("re-merging a split pair reproduces the unsplit delay set") {
        for (std::size_t v = 1; v < models.size(); ++v) {
            const auto& m = models[v];
            // the midpoint of some seed pair equals the coarse delay that the
            // unsplit model carries at split_origin
            const int origin = *m.split_origin;
            const double parent = two_path_coarse().tau_hat_s[static_cast<std::size_t>(origin)];
            int hits = 0;
            for (std::size_t i = 0; i + 1 < m.tau_seeds_s.size(); ++i)
                for (std::size_t j = i + 1; j < m.tau_seeds_s.size(); ++j)
                    if (std::abs(0.5 * (m.tau_seeds_s[i] + m.tau_seeds_s[j]) - parent) < 1e-15)
                        ++hits;
            CHECK(hits >= 1);
        }
    }
}

TEST_CASE("build_candidates: split ordering follows gain magnitude") {
    CoarseEstimate c = two_path_coarse();
    c.alpha_hat = {cplx{0.2, 0.0}, cplx{0.8, 0.0}};
    const auto models = build_candidates(c, 1, 25e-9);
    REQUIRE(models.size() == 2);
    CHECK(*models[1].split_origin == 1);
    const auto s = seeds_ns(models[1]);
    CHECK(s[0] == doctest::Approx(100.0));
    CHECK(s[1] == doctest::Approx(175.0));
    CHECK(s[2] == doctest::Approx(225.0));
}

TEST_CASE("build_candidates: edge behavior") {
    SUBCASE("split_count zero gives the single unsplit model") {
        const auto models = build_candidates(two_path_coarse(), 0, 25e-9);
        REQUIRE(models.size() == 1);
        CHECK_FALSE(models[0].split_origin.has_value());
    }

    SUBCASE("split near zero is clipped to nonnegative delays") {
        CoarseEstimate c;
        c.k_hat = 1;
        c.tau_hat_s = {10e-9};
        c.interval_half_width_s = {50e-9};
        c.alpha_hat = {cplx{1.0, 0.0}};
        c.phi_rel_hat = {};
        c.delta_hat_s = {0.0};
        const auto models = build_candidates(c, 1, 25e-9);
        const auto s = seeds_ns(models[1]);
        CHECK(s[0] == doctest::Approx(0.0));
        CHECK(s[1] == doctest::Approx(35.0));
    }

    SUBCASE("tau_d halves when a seed would leave the coarse interval union") {
        CoarseEstimate c = two_path_coarse();
        c.interval_half_width_s = {20e-9, 20e-9};
        const auto models = build_candidates(c, 1, 30e-9);
        const auto s = seeds_ns(models[1]);
        CHECK(s[0] == doctest::Approx(85.0));
        CHECK(s[1] == doctest::Approx(115.0));
    }

    SUBCASE("invalid arguments throw") {
        CHECK_THROWS_AS(build_candidates(two_path_coarse(), 1, 0.0), std::invalid_argument);
        CHECK_THROWS_AS(build_candidates(two_path_coarse(), 3, 25e-9), std::invalid_argument);
    }
}

TEST_CASE("model_prior") {
    const auto uniform = model_prior(3);
    REQUIRE(uniform.size() == 3);
    for (double w : uniform) CHECK(w == doctest::Approx(1.0 / 3.0));

    CHECK(model_prior(1) == std::vector<double>{1.0});

    const std::vector<double> custom = {2.0, 1.0, 1.0};
    const auto normalized = model_prior(3, &custom);
    CHECK(normalized[0] == doctest::Approx(0.5));
    CHECK(normalized[1] == doctest::Approx(0.25));
    CHECK(normalized[2] == doctest::Approx(0.25));

    const std::vector<double> zeros = {0.0, 0.0};
    CHECK_THROWS_AS(model_prior(2, &zeros), std::invalid_argument);
    CHECK_THROWS_AS(model_prior(0), std::invalid_argument);
}

TEST_CASE("log_prior: term-by-term worked value") {
    CandidateModel m;
    m.id = 1;
    m.k = 2;
    m.tau_seeds_s = {100e-9, 200e-9};
    m.interval_half_width_s = {25e-9, 25e-9};

    PriorConfig prior;
    prior.sigma0_default_s = 1e-10;

    const std::vector<double> tau = {100e-9, 200e-9};
    const std::vector<double> phi = {1.0};
    const std::vector<double> delta = {0.0, 0.0};

    // widths are 50 ns each; phases uniform over [0, 2pi)^(M-1); offsets
    // standard-normal in units of 0.1 ns
    const double tau_term = 2.0 * std::log(1.0 / 50.0);
    const double phi_term = -std::log(2.0 * std::numbers::pi);
    const double delta_term = 2.0 * std::log(1.0 / (std::sqrt(2.0 * std::numbers::pi) * 0.1));
    const double expect = tau_term + phi_term + delta_term;

    const double got = log_prior(m, tau, phi, delta, prior);
    CHECK(got == doctest::Approx(expect).epsilon(1e-12));

    SUBCASE("out-of-interval delay returns -inf") {
        const std::vector<double> tau_out = {130e-9, 200e-9};
        CHECK(log_prior(m, tau_out, phi, delta, prior) ==
              -std::numeric_limits<double>::infinity());
    }

    SUBCASE("doubling widths lowers the delay term by K ln 2") {
        CandidateModel wide = m;
        wide.interval_half_width_s = {50e-9, 50e-9};
        const double got_wide = log_prior(wide, tau, phi, delta, prior);
        CHECK(got - got_wide == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
    }

    SUBCASE("invariant to permuting equal-sigma offsets") {
        const std::vector<double> d1 = {5e-11, -3e-11};
        const std::vector<double> d2 = {-3e-11, 5e-11};
        CHECK(log_prior(m, tau, phi, d1, prior) ==
              doctest::Approx(log_prior(m, tau, phi, d2, prior)).epsilon(1e-14));
    }
}

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "mbvbi/coarse_stage.hpp"
#include "mbvbi/rng.hpp"
#include "mbvbi/signal_model.hpp"

using namespace mbvbi;

namespace {

BandPlan single_band_20mhz() {
    BandPlan plan;
    plan.bands = {{2.4e9, 78.125e3, 256}};
    return plan;
}

ChannelTruth flat_truth(std::vector<double> tau_s, double snr_db,
                        int n_bands = 1) {
    ChannelTruth t;
    t.k_paths = static_cast<int>(tau_s.size());
    t.tau_s = std::move(tau_s);
    for (int k = 0; k < t.k_paths; ++k) t.alpha.push_back(cplx{0.5, 0.0});
    for (int m = 0; m < n_bands; ++m) {
        t.phi_rad.push_back(0.0);
        t.delta_s.push_back(0.0);
    }
    const double power = 0.25 * t.k_paths;
    t.noise_var = power / std::pow(10.0, snr_db / 10.0);
    return t;
}

std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(
        std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

TEST_CASE("delay profile peaks at the true delay") {
    const BandPlan plan = single_band_20mhz();
    const ChannelTruth t = flat_truth({100e-9}, 20.0);
    const Observation obs = synthesize(plan, t, 1, true);
    const std::vector<double> grid = make_delay_grid({});
    REQUIRE(grid.size() == 501);

    const std::vector<double> profile = delay_profile(obs, grid);
    REQUIRE(profile.size() == grid.size());
    CHECK(grid[argmax(profile)] == doctest::Approx(100e-9).epsilon(1e-12));
    for (double p : profile) CHECK(p >= 0.0);

    SUBCASE("all-zero observation gives an all-zero profile") {
        Observation zero = obs;
        std::fill(zero.y.begin(), zero.y.end(), cplx{0.0, 0.0});
        for (double p : delay_profile(zero, grid)) CHECK(p == 0.0);
    }

    SUBCASE("well-separated pair shows a local maximum near each truth") {
        const ChannelTruth t2 = flat_truth({100e-9, 300e-9}, 20.0);
        const Observation obs2 = synthesize(plan, t2, 1, true);
        const std::vector<double> p2 = delay_profile(obs2, grid);
        for (double truth : {100e-9, 300e-9}) {
            bool found = false;
            for (std::size_t i = 1; i + 1 < p2.size(); ++i) {
                if (p2[i] >= p2[i - 1] && p2[i] >= p2[i + 1] &&
                    std::abs(grid[i] - truth) <= 1e-9 + 1e-15) {
                    found = true;
                }
            }
            CHECK(found);
        }
    }

    SUBCASE("empty grid throws") {
        CHECK_THROWS_AS(delay_profile(obs, std::vector<double>{}),
                        std::invalid_argument);
    }
}

TEST_CASE("estimate_order on a clean single path") {
    const BandPlan plan = single_band_20mhz();
    const ChannelTruth t = flat_truth({100e-9}, 20.0);
    const Observation obs = synthesize(plan, t, 1, true);
    CHECK(estimate_order(obs, 3, OrderCriterion::aic) == 1);

    SUBCASE("reproducible, no hidden randomness") {
        CHECK(estimate_order(obs, 3, OrderCriterion::mdl) ==
              estimate_order(obs, 3, OrderCriterion::mdl));
    }
}

TEST_CASE("criterion penalties differ only through eta") {
    BandPlan plan;
    plan.bands = {{2.4e9, 78.125e3, 256}, {2.6e9, 78.125e3, 256}};
    ChannelTruth t = flat_truth({100e-9, 250e-9}, 10.0, 2);
    const Observation obs = synthesize(plan, t, 5);

    // MDL penalty for N_all = 512
    const double eta_mdl = std::log(512.0);
    CHECK(eta_mdl == doctest::Approx(6.238).epsilon(1e-3));
    for (int k = 1; k <= 3; ++k) {
        const double gap = order_criterion_score(obs, k, eta_mdl) -
                           order_criterion_score(obs, k, 2.0);
        CHECK(gap == doctest::Approx((eta_mdl - 2.0) * k).epsilon(1e-9));
    }

    SUBCASE("forcing equal eta makes the criteria agree") {
        for (int rep = 0; rep < 5; ++rep) {
            const Observation o = synthesize(plan, t, 50 + rep);
            CHECK(estimate_order(o, 4, OrderCriterion::aic, {}, 3.3) ==
                  estimate_order(o, 4, OrderCriterion::mdl, {}, 3.3));
        }
    }

    SUBCASE("mdl equals the brute-force argmin of its scores") {
        int best_k = 1;
        double best = order_criterion_score(obs, 1, eta_mdl);
        for (int k = 2; k <= 4; ++k) {
            const double s = order_criterion_score(obs, k, eta_mdl);
            if (s < best) {
                best = s;
                best_k = k;
            }
        }
        CHECK(estimate_order(obs, 4, OrderCriterion::mdl) == best_k);
    }
}

TEST_CASE("close pair at low SNR is usually merged into one path") {
    const BandPlan plan = single_band_20mhz();
    const ChannelTruth t = flat_truth({100e-9, 135e-9}, 0.0);
    int underestimated = 0;
    for (int seed = 0; seed < 100; ++seed) {
        const Observation obs = synthesize(plan, t, 1000 + seed);
        if (estimate_order(obs, 3, OrderCriterion::mdl) == 1) ++underestimated;
    }
    CHECK(underestimated > 50);
}

TEST_CASE("coarse_estimate recovers a clean single path") {
    const BandPlan plan = single_band_20mhz();
    const ChannelTruth t = flat_truth({100e-9}, 20.0);
    const Observation obs = synthesize(plan, t, 1, true);

    const CoarseEstimate c = coarse_estimate(obs, 1);
    REQUIRE(c.k_hat == 1);
    CHECK(std::abs(c.tau_hat_s[0] - 100e-9) <= 1e-9 + 1e-15);
    CHECK(std::abs(c.alpha_hat[0] - t.alpha[0]) < 1e-6);
    CHECK_FALSE(c.merged_fallback);
    CHECK(c.phi_rel_hat.empty());
    REQUIRE(c.delta_hat_s.size() == 1);
    CHECK(c.delta_hat_s[0] == 0.0);

    SUBCASE("fixed interval policy is applied verbatim") {
        const CoarseEstimate cf = coarse_estimate(obs, 1, {25e-9});
        CHECK(cf.interval_half_width_s[0] == doctest::Approx(25e-9));
    }

    SUBCASE("default interval policy derives from bandwidth") {
        // 20 MHz band -> half-width 1 / (2 * 20 MHz) = 25 ns
        CHECK(IntervalPolicy{}.resolve(plan) == doctest::Approx(25e-9));
        CHECK(c.interval_half_width_s[0] == doctest::Approx(25e-9));
    }

    SUBCASE("delay error vanishes at high SNR for separated paths") {
        const ChannelTruth t2 = flat_truth({100e-9, 300e-9}, 40.0);
        const Observation obs2 = synthesize(plan, t2, 9);
        const CoarseEstimate c2 = coarse_estimate(obs2, 2);
        REQUIRE(c2.k_hat == 2);
        CHECK(std::abs(c2.tau_hat_s[0] - 100e-9) <= 1e-9 + 1e-15);
        CHECK(std::abs(c2.tau_hat_s[1] - 300e-9) <= 1e-9 + 1e-15);
    }

    SUBCASE("unresolvable request sets the merged flag and widens intervals") {
        // a grid clipped to the main lobe holds exactly one local maximum
        CoarseConfig narrow;
        narrow.grid_start_s = 80e-9;
        narrow.grid_stop_s = 120e-9;
        CoarseEstimate cm = coarse_estimate(obs, 2, {}, narrow);
        CHECK(cm.merged_fallback);
        REQUIRE(cm.k_hat == 2);
        CHECK(cm.interval_half_width_s[0] > 25e-9);
    }
}

TEST_CASE("oracle_coarse") {
    BandPlan plan;
    plan.bands = {{2.4e9, 78.125e3, 256}, {2.6e9, 78.125e3, 256}};
    ChannelTruth t;
    t.k_paths = 2;
    t.alpha = {cplx{0.4, 0.1}, cplx{-0.2, 0.3}};
    t.tau_s = {100e-9, 135e-9};
    t.phi_rad = {0.7, 1.9};
    t.delta_s = {5e-11, -8e-11};
    t.noise_var = 0.1;

    SUBCASE("zero perturbation reproduces the absorbed truth") {
        const CoarseEstimate c = oracle_coarse(t, plan, {}, 77);
        const RefinedParams p = absorb_reference(t, plan);
        REQUIRE(c.k_hat == 2);
        for (int k = 0; k < 2; ++k) {
            CHECK(c.tau_hat_s[k] == doctest::Approx(t.tau_s[k]).epsilon(1e-15));
            CHECK(std::abs(c.alpha_hat[k] - p.alpha[k]) < 1e-15);
        }
        CHECK(c.phi_rel_hat[0] == doctest::Approx(p.phi_rel[0]).epsilon(1e-15));
        CHECK(c.delta_hat_s[0] == doctest::Approx(t.delta_s[0]).epsilon(1e-15));
        CHECK(c.delta_hat_s[1] == doctest::Approx(t.delta_s[1]).epsilon(1e-15));
    }

    SUBCASE("merge directive replaces a pair by its weighted mean") {
        ChannelTruth eq = t;
        eq.alpha = {cplx{0.5, 0.0}, cplx{0.5, 0.0}};
        OracleErrorSpec spec;
        spec.merge = {0, 1};
        const CoarseEstimate c = oracle_coarse(eq, plan, spec, 77);
        REQUIRE(c.k_hat == 1);
        CHECK(c.tau_hat_s[0] == doctest::Approx(117.5e-9).epsilon(1e-12));
    }

    SUBCASE("delay perturbations are centered") {
        OracleErrorSpec spec;
        spec.tau_sigma_s = 2e-9;
        double sum = 0.0;
        const int n = 10000;
        for (int i = 0; i < n; ++i) {
            const CoarseEstimate c = oracle_coarse(t, plan, spec, 5000 + i);
            sum += (c.tau_hat_s[0] - t.tau_s[0]) + (c.tau_hat_s[1] - t.tau_s[1]);
        }
        const double mean = sum / (2.0 * n);
        CHECK(std::abs(mean) < 3.0 * 2e-9 / std::sqrt(2.0 * n));
    }
}

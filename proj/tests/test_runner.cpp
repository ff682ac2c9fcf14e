#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "mbvbi/runner.hpp"
#include "mbvbi/signal_model.hpp"

using namespace mbvbi;

namespace {

struct Scene {
    BandPlan plan;
    ChannelTruth truth;
    Observation obs;
    CoarseEstimate coarse;
};

Scene make_scene(std::uint64_t seed, int k_paths = 2) {
    Scene sc;
    sc.plan.bands = {{2.4e9, 78.125e3, 16}, {2.6e9, 78.125e3, 16}};
    sc.truth.k_paths = k_paths;
    sc.truth.alpha = {cplx{0.5, 0.1}, cplx{-0.2, 0.4}};
    sc.truth.tau_s = {100e-9, 220e-9};
    sc.truth.alpha.resize(static_cast<std::size_t>(k_paths));
    sc.truth.tau_s.resize(static_cast<std::size_t>(k_paths));
    sc.truth.phi_rad = {0.9, 2.2};
    sc.truth.delta_s = {6e-11, -4e-11};
    sc.truth.noise_var = 0.01;
    sc.obs = synthesize(sc.plan, sc.truth, seed);
    OracleErrorSpec err;
    err.tau_sigma_s = 2e-9;
    err.interval_half_width_s = 25e-9;
    sc.coarse = oracle_coarse(sc.truth, sc.plan, err, seed + 1);
    return sc;
}

RunConfig small_config(std::uint64_t seed) {
    RunConfig cfg;
    cfg.seed = seed;
    cfg.split_count = 1;
    cfg.max_iters = 40;
    cfg.posterior.n_particles = 5;
    return cfg;
}

HybridPosterior toy_q() {
    HybridPosterior q;
    q.tau.resize(1);
    q.tau[0].pos_s = {80e-9, 100e-9, 120e-9};
    q.tau[0].w = {0.25, 0.5, 0.25};
    q.tau[0].lo_s = 75e-9;
    q.tau[0].hi_s = 125e-9;
    q.alpha = {cplx{0.5, 0.0}};
    q.delta.resize(2);
    q.delta[0] = {0.0, 1e-20};
    q.delta[1] = {5e-11, 2e-20};
    q.phi.resize(1);
    q.phi[0] = {1.0, 0.25};
    return q;
}

}  // namespace

TEST_CASE("eta delta norm") {
    const PriorConfig prior;
    const HybridPosterior q = toy_q();

    CHECK(eta_delta_norm(q, q, prior) == 0.0);

    SUBCASE("each block carries its own normalization") {
        HybridPosterior r = q;
        r.tau[0].pos_s[1] += 5e-9; // range 50 ns -> 0.1
        CHECK(eta_delta_norm(q, r, prior) == doctest::Approx(0.1).epsilon(1e-12));

        r = q;
        r.tau[0].w = {0.25, 0.48, 0.27}; // weights compare absolutely
        CHECK(eta_delta_norm(q, r, prior) == doctest::Approx(0.02).epsilon(1e-10));

        r = q;
        r.delta[1].mean += 2e-10; // scale 4 sigma0 = 4e-10
        CHECK(eta_delta_norm(q, r, prior) == doctest::Approx(0.5).epsilon(1e-12));

        r = q;
        r.delta[0].var = 1.5e-20; // relative to the previous variance
        CHECK(eta_delta_norm(q, r, prior) == doctest::Approx(0.5).epsilon(1e-12));

        r = q;
        r.phi[0].mean += std::numbers::pi; // scale 2 pi
        CHECK(eta_delta_norm(q, r, prior) == doctest::Approx(0.5).epsilon(1e-12));

        r = q;
        r.phi[0].var = 0.2; // |0.2 - 0.25| / 0.25
        CHECK(eta_delta_norm(q, r, prior) == doctest::Approx(0.2).epsilon(1e-12));
    }

    SUBCASE("worst block wins") {
        HybridPosterior r = q;
        r.tau[0].pos_s[0] += 1e-9;       // 0.02
        r.phi[0].mean += std::numbers::pi; // 0.5
        CHECK(eta_delta_norm(q, r, prior) == doctest::Approx(0.5).epsilon(1e-12));
    }

    SUBCASE("shape mismatch throws") {
        HybridPosterior r = q;
        r.phi.clear();
        CHECK_THROWS_AS(eta_delta_norm(q, r, prior), std::invalid_argument);
    }
}

TEST_CASE("convergence check") {
    auto rec = [](double dz, double de) {
        IterationRecord r;
        r.delta_zeta = dz;
        r.delta_eta = de;
        return r;
    };
    std::vector<IterationRecord> trace;
    CHECK_FALSE(convergence_check(trace, 1e-3, 1e-3, 3));

    trace.push_back(rec(1e-5, 1e-5));
    trace.push_back(rec(1e-5, 1e-5));
    CHECK_FALSE(convergence_check(trace, 1e-3, 1e-3, 3)); // shorter than window
    trace.push_back(rec(1e-5, 1e-5));
    CHECK(convergence_check(trace, 1e-3, 1e-3, 3));

    SUBCASE("violation inside the window blocks it") {
        trace.push_back(rec(1e-5, 5e-3));
        CHECK_FALSE(convergence_check(trace, 1e-3, 1e-3, 3));
        trace.push_back(rec(1e-5, 1e-5));
        trace.push_back(rec(1e-5, 1e-5));
        CHECK_FALSE(convergence_check(trace, 1e-3, 1e-3, 3));
        trace.push_back(rec(1e-5, 1e-5));
        CHECK(convergence_check(trace, 1e-3, 1e-3, 3)); // violation aged out
    }

    SUBCASE("either tolerance alone blocks it") {
        trace.push_back(rec(5e-3, 1e-5));
        CHECK_FALSE(convergence_check(trace, 1e-3, 1e-3, 1));
        CHECK(convergence_check(trace, 1e-2, 1e-3, 1));
    }

    SUBCASE("boundary is exclusive") {
        trace.push_back(rec(1e-3, 1e-5));
        CHECK_FALSE(convergence_check(trace, 1e-3, 1e-3, 1));
    }

    CHECK_THROWS_AS(convergence_check(trace, 1e-3, 1e-3, 0), std::invalid_argument);
}

TEST_CASE("run config validation") {
    RunConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    RunConfig bad = cfg;
    bad.b_min = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.posterior.n_particles = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.max_iters = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.window = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.tol_eta = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.eps_zeta = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.kappa1 = -0.1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.split_count = -1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.tau_d_s = -1e-9;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.schedule.rho.kappa = 0.4;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("full run: invariants of the trace") {
    const Scene sc = make_scene(1001);
    const RunConfig cfg = small_config(7);
    const EstimateReport rep = run_mm_spvbi(sc.obs, sc.coarse, cfg);

    REQUIRE(rep.models.size() == 2); // unsplit plus one split variant
    REQUIRE(rep.posteriors.size() == 2);
    REQUIRE(rep.iters_run >= 1);
    CHECK(rep.iters_run <= cfg.max_iters);
    CHECK(rep.trace.size() == static_cast<std::size_t>(rep.iters_run));

    long long drawn = 0;
    for (std::size_t i = 0; i < rep.trace.size(); ++i) {
        const IterationRecord& r = rep.trace[i];
        CHECK(r.t == static_cast<int>(i));
        const StepSizes s = step_sizes(cfg.schedule, r.t);
        CHECK(r.rho == s.rho);
        CHECK(r.gamma == s.gamma);

        REQUIRE(r.zeta.size() == 2);
        double sum = 0.0;
        for (double z : r.zeta) {
            CHECK(z >= cfg.eps_zeta * (1.0 - 1e-9));
            sum += z;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

        REQUIRE(r.models.size() == 2);
        for (const ModelIterSummary& m : r.models) {
            CHECK(m.b_v >= 1);
            CHECK(m.b_v <= r.n_virtual);
            CHECK(std::isfinite(m.g_mean));
            CHECK(m.delta_eta >= 0.0);
            drawn += m.b_v;
        }
        CHECK(r.delta_eta >= 0.0);
        CHECK(r.delta_zeta >= 0.0);
        CHECK(r.delta_zeta <= 1.0);
    }
    CHECK(rep.total_samples == drawn);

    CHECK(rep.converged ==
          convergence_check(rep.trace, cfg.tol_zeta, cfg.tol_eta, cfg.window));

    REQUIRE(rep.zeta_final.size() == 2);
    std::size_t best = 0;
    for (std::size_t v = 1; v < rep.zeta_final.size(); ++v)
        if (rep.zeta_final[v] > rep.zeta_final[best]) best = v;
    CHECK(rep.best_model == static_cast<int>(best));

    const int k_best = rep.models[static_cast<std::size_t>(rep.best_model)].k;
    CHECK(rep.estimates.tau_map_s.size() == static_cast<std::size_t>(k_best));
    CHECK(rep.estimates.alpha_hat.size() == static_cast<std::size_t>(k_best));
    for (const HybridPosterior& q : rep.posteriors) CHECK_NOTHROW(q.validate());
}

TEST_CASE("full run: determinism") {
    const Scene sc = make_scene(2002);
    const RunConfig cfg = small_config(99);
    const EstimateReport a = run_mm_spvbi(sc.obs, sc.coarse, cfg);
    const EstimateReport b = run_mm_spvbi(sc.obs, sc.coarse, cfg);

    CHECK(trace_to_text(a) == trace_to_text(b));
    CHECK(a.best_model == b.best_model);
    REQUIRE(a.estimates.tau_map_s.size() == b.estimates.tau_map_s.size());
    for (std::size_t k = 0; k < a.estimates.tau_map_s.size(); ++k) {
        CHECK(a.estimates.tau_map_s[k] == b.estimates.tau_map_s[k]);
        CHECK(a.estimates.tau_mmse_s[k] == b.estimates.tau_mmse_s[k]);
        CHECK(a.estimates.alpha_hat[k] == b.estimates.alpha_hat[k]);
    }
    CHECK(a.total_samples == b.total_samples);

    RunConfig other = cfg;
    other.seed = 100;
    const EstimateReport c = run_mm_spvbi(sc.obs, sc.coarse, other);
    CHECK(trace_to_text(a) != trace_to_text(c));
}

TEST_CASE("full run: single-model ensemble is degenerate") {
    const Scene sc = make_scene(3003);
    RunConfig cfg = small_config(11);
    cfg.split_count = 0;
    cfg.max_iters = 15;
    const EstimateReport rep = run_mm_spvbi(sc.obs, sc.coarse, cfg);

    REQUIRE(rep.models.size() == 1);
    CHECK(rep.best_model == 0);
    REQUIRE(rep.zeta_final.size() == 1);
    CHECK(rep.zeta_final[0] == doctest::Approx(1.0).epsilon(1e-14));
    for (const IterationRecord& r : rep.trace) {
        CHECK(r.zeta[0] == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(r.delta_zeta < 1e-14);
        CHECK_FALSE(r.dominance);
        CHECK(r.models[0].b_v == cfg.b_min);
    }
}

TEST_CASE("full run: dominance disabled keeps the flag off") {
    const Scene sc = make_scene(4004);
    RunConfig cfg = small_config(13);
    cfg.kappa2 = std::numeric_limits<double>::infinity();
    cfg.max_iters = 25;
    const EstimateReport rep = run_mm_spvbi(sc.obs, sc.coarse, cfg);
    for (const IterationRecord& r : rep.trace) CHECK_FALSE(r.dominance);
}

TEST_CASE("full run: trace can be suppressed") {
    const Scene sc = make_scene(5005);
    RunConfig cfg = small_config(17);
    cfg.max_iters = 5;
    cfg.record_trace = false;
    const EstimateReport rep = run_mm_spvbi(sc.obs, sc.coarse, cfg);
    CHECK(rep.trace.empty());
    CHECK(rep.iters_run == 5);
    CHECK(rep.total_samples > 0);
}

TEST_CASE("full run: rejects an empty coarse stage") {
    const Scene sc = make_scene(6006);
    CoarseEstimate empty = sc.coarse;
    empty.k_hat = 0;
    empty.tau_hat_s.clear();
    CHECK_THROWS_AS(run_mm_spvbi(sc.obs, empty, small_config(1)), std::invalid_argument);
}

TEST_CASE("trace serialization format") {
    EstimateReport rep;
    IterationRecord r;
    r.t = 0;
    r.rho = 1.0;
    r.gamma = 1.0;
    r.n_virtual = 20;
    r.dominance = false;
    r.zeta = {0.5, 0.5};
    r.models = {{10, 1.5, 0.25}, {10, -2.0, 0.5}};
    r.delta_eta = 0.25;
    r.delta_zeta = 0.125;
    rep.trace.push_back(r);
    CHECK(trace_to_text(rep) ==
          "t=0 rho=1 gamma=1 ns=20 dom=0 zeta=0.5,0.5 bv=10,10 g=1.5,-2 "
          "deta=0.25 dzeta=0.125\n");
}

TEST_CASE("full run: high-SNR two-path run closes in on the truth") {
    // wide bands so the delays are identifiable well below the particle
    // spacing; coarse handed the exact truth, so the center particles start
    // on it and the refinement must keep them there and sharpen the weights
    Scene sc;
    sc.plan.bands = {{2.4e9, 78.125e3, 256}, {2.6e9, 78.125e3, 256}};
    sc.truth.k_paths = 2;
    sc.truth.alpha = {cplx{0.5, 0.1}, cplx{-0.2, 0.4}};
    sc.truth.tau_s = {100e-9, 220e-9};
    sc.truth.phi_rad = {0.9, 2.2};
    sc.truth.delta_s = {6e-11, -4e-11};
    sc.truth.noise_var = 0.46 / std::pow(10.0, 2.5);
    sc.obs = synthesize(sc.plan, sc.truth, 7007);
    OracleErrorSpec err;
    err.interval_half_width_s = 25e-9;
    sc.coarse = oracle_coarse(sc.truth, sc.plan, err, 7008);

    RunConfig cfg = small_config(19);
    cfg.max_iters = 120;
    cfg.posterior.n_particles = 7;
    const EstimateReport rep = run_mm_spvbi(sc.obs, sc.coarse, cfg);

    const CandidateModel& best = rep.models[static_cast<std::size_t>(rep.best_model)];
    CHECK(best.k == 2);
    CHECK(rep.zeta_final[static_cast<std::size_t>(rep.best_model)] > 0.9);
    double worst = 0.0;
    for (double t_true : sc.truth.tau_s) {
        double closest = 1.0;
        for (double t_hat : rep.estimates.tau_map_s)
            closest = std::min(closest, std::abs(t_hat - t_true));
        worst = std::max(worst, closest);
    }
    CHECK(worst < 0.5e-9);
}

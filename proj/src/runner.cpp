#include "mbvbi/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

namespace mbvbi {

namespace {

constexpr std::uint64_t kSampleSalt = 0x73616d706c65ULL; // "sample"

double block_delta(double a, double b, double scale) {
    return scale > 0.0 ? std::abs(a - b) / scale : 0.0;
}

} // namespace

void RunConfig::validate() const {
    if (b_min < 1) throw std::invalid_argument("run config: B must be >= 1");
    if (posterior.n_particles < 1)
        throw std::invalid_argument("run config: N_p must be >= 1");
    if (max_iters < 1) throw std::invalid_argument("run config: max_iters must be >= 1");
    if (window < 1) throw std::invalid_argument("run config: window must be >= 1");
    if (!(tol_zeta > 0.0) || !(tol_eta > 0.0))
        throw std::invalid_argument("run config: tolerances must be positive");
    if (!(eps_zeta > 0.0)) throw std::invalid_argument("run config: eps_zeta must be positive");
    if (!(kappa1 >= 0.0)) throw std::invalid_argument("run config: kappa1 must be >= 0");
    if (split_count < 0) throw std::invalid_argument("run config: split_count must be >= 0");
    if (tau_d_s < 0.0) throw std::invalid_argument("run config: tau_d must be >= 0");
    schedule.validate();
}

double eta_delta_norm(const HybridPosterior& prev, const HybridPosterior& next,
                      const PriorConfig& prior) {
    if (prev.tau.size() != next.tau.size() || prev.delta.size() != next.delta.size() ||
        prev.phi.size() != next.phi.size())
        throw std::invalid_argument("eta delta: shape mismatch");
    double worst = 0.0;
    for (std::size_t k = 0; k < prev.tau.size(); ++k) {
        const double range = prev.tau[k].hi_s - prev.tau[k].lo_s;
        for (std::size_t p = 0; p < prev.tau[k].pos_s.size(); ++p) {
            worst = std::max(worst, block_delta(prev.tau[k].pos_s[p], next.tau[k].pos_s[p], range));
            worst = std::max(worst, std::abs(prev.tau[k].w[p] - next.tau[k].w[p]));
        }
    }
    for (std::size_t m = 0; m < prev.delta.size(); ++m) {
        const double s0 = prior.sigma0(static_cast<int>(m));
        worst = std::max(worst, block_delta(prev.delta[m].mean, next.delta[m].mean, 4.0 * s0));
        worst = std::max(worst,
                         block_delta(prev.delta[m].var, next.delta[m].var, prev.delta[m].var));
    }
    for (std::size_t m = 0; m < prev.phi.size(); ++m) {
        worst = std::max(worst,
                         block_delta(prev.phi[m].mean, next.phi[m].mean, 2.0 * std::numbers::pi));
        worst = std::max(worst, block_delta(prev.phi[m].var, next.phi[m].var, prev.phi[m].var));
    }
    return worst;
}

EstimateReport run_mm_spvbi(const Observation& obs, const CoarseEstimate& coarse,
                            const RunConfig& cfg) {
    cfg.validate();
    if (coarse.k_hat < 1) throw std::invalid_argument("run: coarse estimate has no paths");

    const double tau_d =
        cfg.tau_d_s > 0.0 ? cfg.tau_d_s : 1.0 / obs.plan.max_bandwidth_hz();

    EstimateReport report;
    report.models = build_candidates(coarse, cfg.split_count, tau_d);
    const auto n_models = report.models.size();

    std::vector<double> zeta = model_prior(static_cast<int>(n_models));
    const std::vector<double> zeta0 = zeta;

    std::vector<HybridPosterior> q;
    std::vector<EtaGradients> f_eta;
    q.reserve(n_models);
    f_eta.reserve(n_models);
    for (const CandidateModel& model : report.models) {
        q.push_back(init_posterior(model, coarse, obs.plan, obs, cfg.prior, cfg.posterior));
        f_eta.push_back(zero_gradients(q.back()));
    }
    std::vector<double> f_zeta(n_models, 0.0);

    std::vector<ThetaSample> samples;
    std::vector<double> g_means(n_models, 0.0);

    for (int t = 0; t < cfg.max_iters; ++t) {
        const StepSizes steps = step_sizes(cfg.schedule, t);
        const Allocation alloc =
            prune(allocate(zeta, cfg.b_min), zeta, cfg.kappa1, cfg.kappa2, cfg.b_min);
        report.total_samples += alloc.drawn();

        IterationRecord rec;
        rec.t = t;
        rec.rho = steps.rho;
        rec.gamma = steps.gamma;
        rec.n_virtual = alloc.n_total;
        rec.dominance = alloc.dominance_active;
        rec.models.resize(n_models);

        double delta_eta = 0.0;
        for (std::size_t v = 0; v < n_models; ++v) {
            const int b_v = alloc.per_model[v];
            Rng rng(derive_seed(cfg.seed,
                                {kSampleSalt, static_cast<std::uint64_t>(report.models[v].id),
                                 static_cast<std::uint64_t>(t)}));
            samples.clear();
            samples.reserve(static_cast<std::size_t>(b_v));
            for (int b = 0; b < b_v; ++b) samples.push_back(sample_theta(q[v], rng));

            const EtaGradients grads =
                compute_batch_gradients(q[v], obs, report.models[v], cfg.prior, samples);
            g_means[v] = grads.g_mean;

            const FisherProxies fisher = compute_fisher_proxies(q[v].alpha, obs, cfg.prior);
            f_eta[v] = smooth_gradient(f_eta[v], scale_gradients(grads, zeta[v]), steps.rho);
            HybridPosterior next = update_eta(q[v], f_eta[v], cfg.schedule, t, fisher, cfg.prior,
                                              cfg.gamma_policy);

            const std::vector<cplx> alpha_ml = ls_alpha(obs, lambda_hat(next));
            next.alpha = smooth_alpha(q[v].alpha, alpha_ml, steps.gamma);

            const double dv = eta_delta_norm(q[v], next, cfg.prior);
            delta_eta = std::max(delta_eta, dv);
            rec.models[v] = {b_v, grads.g_mean, dv};
            q[v] = std::move(next);
        }

        const std::vector<double> gz = grad_zeta(g_means, zeta, zeta0, cfg.eps_zeta);
        f_zeta = smooth_gradient(std::span<const double>(f_zeta),
                                 std::span<const double>(gz), steps.rho);
        const std::vector<double> zeta_next =
            update_zeta(zeta, f_zeta, cfg.schedule, t, cfg.eps_zeta);
        double delta_zeta = 0.0;
        for (std::size_t v = 0; v < n_models; ++v)
            delta_zeta = std::max(delta_zeta, std::abs(zeta_next[v] - zeta[v]));
        zeta = zeta_next;

        rec.zeta = zeta;
        rec.delta_eta = delta_eta;
        rec.delta_zeta = delta_zeta;
        report.trace.push_back(rec);
        report.iters_run = t + 1;

        if (convergence_check(report.trace, cfg.tol_zeta, cfg.tol_eta, cfg.window)) {
            report.converged = true;
            break;
        }
    }

    std::size_t best = 0;
    for (std::size_t v = 1; v < n_models; ++v)
        if (zeta[v] > zeta[best]) best = v;
    report.best_model = static_cast<int>(best);
    report.zeta_final = zeta;
    report.estimates = extract_estimates(q[best]);
    report.posteriors = std::move(q);
    if (!cfg.record_trace) report.trace.clear();
    return report;
}

bool convergence_check(const std::vector<IterationRecord>& trace, double tol_zeta,
                       double tol_eta, int window) {
    if (window < 1) throw std::invalid_argument("convergence check: window must be >= 1");
    if (trace.size() < static_cast<std::size_t>(window)) return false;
    for (std::size_t i = trace.size() - static_cast<std::size_t>(window); i < trace.size(); ++i)
        if (trace[i].delta_zeta >= tol_zeta || trace[i].delta_eta >= tol_eta) return false;
    return true;
}

std::string trace_to_text(const EstimateReport& report) {
    std::string out;
    char buf[128];
    for (const IterationRecord& rec : report.trace) {
        std::snprintf(buf, sizeof buf, "t=%d rho=%.17g gamma=%.17g ns=%d dom=%d", rec.t, rec.rho,
                      rec.gamma, rec.n_virtual, rec.dominance ? 1 : 0);
        out += buf;
        out += " zeta=";
        for (std::size_t v = 0; v < rec.zeta.size(); ++v) {
            std::snprintf(buf, sizeof buf, v == 0 ? "%.17g" : ",%.17g", rec.zeta[v]);
            out += buf;
        }
        out += " bv=";
        for (std::size_t v = 0; v < rec.models.size(); ++v) {
            std::snprintf(buf, sizeof buf, v == 0 ? "%d" : ",%d", rec.models[v].b_v);
            out += buf;
        }
        out += " g=";
        for (std::size_t v = 0; v < rec.models.size(); ++v) {
            std::snprintf(buf, sizeof buf, v == 0 ? "%.17g" : ",%.17g", rec.models[v].g_mean);
            out += buf;
        }
        std::snprintf(buf, sizeof buf, " deta=%.17g dzeta=%.17g\n", rec.delta_eta,
                      rec.delta_zeta);
        out += buf;
    }
    return out;
}

} // namespace mbvbi

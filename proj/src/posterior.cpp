#include "mbvbi/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>

#include "mbvbi/densities.hpp"
#include "mbvbi/lls.hpp"

namespace mbvbi {

namespace {

void append_row(std::string& out, const char* label, std::span<const double> v) {
    char buf[64];
    out += label;
    for (double x : v) {
        std::snprintf(buf, sizeof buf, " %.17g", x);
        out += buf;
    }
    out += '\n';
}

} // namespace

void ParticleDist::validate(double eps_w) const {
    if (pos_s.empty() || pos_s.size() != w.size())
        throw std::invalid_argument("particle distribution: empty or mismatched arrays");
    if (!(lo_s <= hi_s)) throw std::invalid_argument("particle distribution: inverted interval");
    double sum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (!(w[i] >= eps_w * (1.0 - 1e-12)))
            throw std::invalid_argument("particle weight below floor");
        if (pos_s[i] < lo_s - 1e-18 || pos_s[i] > hi_s + 1e-18)
            throw std::invalid_argument("particle position outside interval");
        sum += w[i];
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("particle weights do not sum to one");
}

void HybridPosterior::validate() const {
    if (tau.empty()) throw std::invalid_argument("posterior has no delay factors");
    if (alpha.size() != tau.size())
        throw std::invalid_argument("posterior gain count != path count");
    if (phi.size() + 1 != delta.size())
        throw std::invalid_argument("posterior needs one phase factor per band after the first");
    for (const auto& p : tau) p.validate(eps_w);
    for (const auto& d : delta)
        if (!(d.var >= var_floor_delta * (1.0 - 1e-12)))
            throw std::invalid_argument("timing-offset variance below floor");
    for (const auto& f : phi)
        if (!(f.var >= var_floor_phi * (1.0 - 1e-12)))
            throw std::invalid_argument("phase variance below floor");
}

HybridPosterior init_posterior(const CandidateModel& model, const CoarseEstimate& coarse,
                               const BandPlan& plan, const Observation& obs,
                               const PriorConfig& prior, const PosteriorConfig& cfg) {
    if (cfg.n_particles < 1) throw std::invalid_argument("n_particles must be >= 1");
    const int m_bands = plan.n_bands();
    if (static_cast<int>(coarse.delta_hat_s.size()) != m_bands ||
        static_cast<int>(coarse.phi_rel_hat.size()) != m_bands - 1)
        throw std::invalid_argument("coarse estimate band arrays do not match the plan");

    HybridPosterior q;
    q.eps_w = cfg.eps_w();
    q.var_floor_delta = cfg.var_floor_delta;
    q.var_floor_phi = cfg.var_floor_phi;

    q.tau.resize(static_cast<std::size_t>(model.k));
    for (int k = 0; k < model.k; ++k) {
        auto& p = q.tau[static_cast<std::size_t>(k)];
        p.lo_s = model.interval_lo(k);
        p.hi_s = model.interval_hi(k);
        p.pos_s.resize(static_cast<std::size_t>(cfg.n_particles));
        p.w.assign(static_cast<std::size_t>(cfg.n_particles), 1.0 / cfg.n_particles);
        if (cfg.n_particles == 1) {
            p.pos_s[0] = 0.5 * (p.lo_s + p.hi_s);
        } else {
            const double step = (p.hi_s - p.lo_s) / (cfg.n_particles - 1);
            for (int n = 0; n < cfg.n_particles; ++n)
                p.pos_s[static_cast<std::size_t>(n)] = p.lo_s + step * n;
        }
    }

    const CMatrix d = steering_matrix(plan, model.tau_seeds_s, coarse.phi_rel_hat,
                                      coarse.delta_hat_s);
    q.alpha = solve_ls_gains(d, obs.y).gains;

    const auto tables = make_freq_tables(plan);
    double power = 0.0;
    for (const cplx& a : q.alpha) power += std::norm(a);

    q.delta.resize(static_cast<std::size_t>(m_bands));
    std::size_t i = 0;
    for (int m = 0; m < m_bands; ++m) {
        double s2 = 0.0;
        const int n_m = plan.bands[static_cast<std::size_t>(m)].n_sub;
        for (int n = 0; n < n_m; ++n, ++i) {
            const double w = 2.0 * std::numbers::pi * tables.f_offset[i];
            s2 += w * w;
        }
        const double s0 = prior.sigma0(m);
        double var = cfg.delta_init_var;
        if (var <= 0.0) {
            const double fisher = 2.0 * power / obs.noise_var * s2 + 1.0 / (s0 * s0);
            var = std::min(s0 * s0, 1.0 / fisher);
        }
        q.delta[static_cast<std::size_t>(m)] = {coarse.delta_hat_s[static_cast<std::size_t>(m)],
                                                std::max(var, cfg.var_floor_delta)};
    }

    q.phi.resize(static_cast<std::size_t>(m_bands - 1));
    const double half_pi_sq = std::numbers::pi * std::numbers::pi / 4.0;
    for (int m = 0; m + 1 < m_bands; ++m) {
        double var = cfg.phi_init_var;
        if (var <= 0.0) {
            const int n_m = plan.bands[static_cast<std::size_t>(m + 1)].n_sub;
            const double fisher = 2.0 * power * n_m / obs.noise_var;
            var = fisher > 0.0 ? std::min(half_pi_sq, 1.0 / fisher) : half_pi_sq;
        }
        q.phi[static_cast<std::size_t>(m)] = {coarse.phi_rel_hat[static_cast<std::size_t>(m)],
                                              std::max(var, cfg.var_floor_phi)};
    }

    q.validate();
    return q;
}

ThetaSample sample_theta(const HybridPosterior& q, Rng& rng) {
    ThetaSample s;
    s.tau_s.resize(q.tau.size());
    s.tau_idx.resize(q.tau.size());
    for (std::size_t k = 0; k < q.tau.size(); ++k) {
        const int idx = rng.categorical(q.tau[k].w);
        s.tau_idx[k] = idx;
        s.tau_s[k] = q.tau[k].pos_s[static_cast<std::size_t>(idx)];
    }
    s.delta_s.resize(q.delta.size());
    for (std::size_t m = 0; m < q.delta.size(); ++m)
        s.delta_s[m] = rng.normal(q.delta[m].mean, std::sqrt(q.delta[m].var));
    s.phi_rel.resize(q.phi.size());
    for (std::size_t m = 0; m < q.phi.size(); ++m)
        s.phi_rel[m] = rng.normal(q.phi[m].mean, std::sqrt(q.phi[m].var));
    s.alpha = q.alpha;
    return s;
}

double log_q(const HybridPosterior& q, const ThetaSample& s) {
    double lq = 0.0;
    for (std::size_t k = 0; k < q.tau.size(); ++k)
        lq += std::log(q.tau[k].w[static_cast<std::size_t>(s.tau_idx[k])]);
    for (std::size_t m = 0; m < q.delta.size(); ++m)
        lq += log_normal_ns(s.delta_s[m], q.delta[m].mean, q.delta[m].var);
    for (std::size_t m = 0; m < q.phi.size(); ++m)
        lq += log_normal(s.phi_rel[m], q.phi[m].mean, q.phi[m].var);
    return lq;
}

double g_value(const HybridPosterior& q, const ThetaSample& s, const Observation& obs,
               const CandidateModel& model, const PriorConfig& prior) {
    const double lp = log_prior(model, s.tau_s, s.phi_rel, s.delta_s, prior);
    if (!std::isfinite(lp)) return std::numeric_limits<double>::infinity();
    const RefinedParams p{s.alpha, s.tau_s, s.phi_rel, s.delta_s};
    return log_q(q, s) - log_likelihood(obs, p) - lp;
}

Estimates extract_estimates(const HybridPosterior& q) {
    Estimates e;
    e.tau_map_s.resize(q.tau.size());
    e.tau_mmse_s.resize(q.tau.size());
    for (std::size_t k = 0; k < q.tau.size(); ++k) {
        const auto& p = q.tau[k];
        std::size_t best = 0;
        double mean = 0.0;
        for (std::size_t n = 0; n < p.w.size(); ++n) {
            if (p.w[n] > p.w[best]) best = n;
            mean += p.w[n] * p.pos_s[n];
        }
        e.tau_map_s[k] = p.pos_s[best];
        e.tau_mmse_s[k] = mean;
    }
    e.delta_hat_s.resize(q.delta.size());
    for (std::size_t m = 0; m < q.delta.size(); ++m) e.delta_hat_s[m] = q.delta[m].mean;
    e.phi_hat.resize(q.phi.size());
    for (std::size_t m = 0; m < q.phi.size(); ++m) e.phi_hat[m] = q.phi[m].mean;
    e.alpha_hat = q.alpha;
    return e;
}

std::string to_snapshot_text(const HybridPosterior& q) {
    std::string out;
    char buf[96];
    for (std::size_t k = 0; k < q.tau.size(); ++k) {
        std::snprintf(buf, sizeof buf, "tau[%zu]", k);
        std::string label = buf;
        append_row(out, (label + ".pos").c_str(), q.tau[k].pos_s);
        append_row(out, (label + ".w").c_str(), q.tau[k].w);
    }
    for (std::size_t m = 0; m < q.delta.size(); ++m) {
        std::snprintf(buf, sizeof buf, "delta[%zu] %.17g %.17g\n", m, q.delta[m].mean,
                      q.delta[m].var);
        out += buf;
    }
    for (std::size_t m = 0; m < q.phi.size(); ++m) {
        std::snprintf(buf, sizeof buf, "phi[%zu] %.17g %.17g\n", m, q.phi[m].mean, q.phi[m].var);
        out += buf;
    }
    for (std::size_t k = 0; k < q.alpha.size(); ++k) {
        std::snprintf(buf, sizeof buf, "alpha[%zu] %.17g %.17g\n", k, q.alpha[k].real(),
                      q.alpha[k].imag());
        out += buf;
    }
    return out;
}

} // namespace mbvbi

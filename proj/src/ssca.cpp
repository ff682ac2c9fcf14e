#include "mbvbi/ssca.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "mbvbi/densities.hpp"
#include "mbvbi/lls.hpp"

namespace mbvbi {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kZetaCap = 0.1;

double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

double mean_of(std::span<const double> v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Leave-one-out baselined score estimate: mean_b[s_b (r_b - mean r)] scaled
/// by B/(B-1) so the self-term bias cancels; B = 1 falls back to the raw
/// product.
double loo_score_mean(std::span<const double> score, std::span<const double> r) {
    const std::size_t b = score.size();
    if (b == 1) return score[0] * r[0];
    const double rbar = mean_of(r);
    double acc = 0.0;
    for (std::size_t i = 0; i < b; ++i) acc += score[i] * (r[i] - rbar);
    return acc / static_cast<double>(b - 1);
}

struct ProbeCaps {
    double range_quad = 1e-4;
    double kappa_fisher = 0.01;
};

} // namespace

void StepSchedule::validate() const {
    if (!(rho.kappa > 0.5 && rho.kappa < gamma.kappa && gamma.kappa <= 1.0))
        throw std::invalid_argument("step schedule requires 0.5 < kappa_rho < kappa_gamma <= 1");
    if (!(rho.a > 0.0) || !(gamma.a > 0.0) || !(rho.b > 0.0) || !(gamma.b > 0.0))
        throw std::invalid_argument("step schedule coefficients must be positive");
}

StepSizes step_sizes(const StepSchedule& s, int t) {
    if (t < 0) throw std::invalid_argument("iteration index must be nonnegative");
    return {std::min(s.rho.at(t), 1.0), std::min(s.gamma.at(t), 1.0)};
}

EtaGradients zero_gradients(const HybridPosterior& q) {
    EtaGradients g;
    g.d_pos.resize(q.tau.size());
    g.d_w.resize(q.tau.size());
    for (std::size_t k = 0; k < q.tau.size(); ++k) {
        g.d_pos[k].assign(q.tau[k].pos_s.size(), 0.0);
        g.d_w[k].assign(q.tau[k].pos_s.size(), 0.0);
    }
    g.d_delta.assign(q.delta.size(), MomentGrad{});
    g.d_phi.assign(q.phi.size(), MomentGrad{});
    return g;
}

EtaGradients compute_batch_gradients(const HybridPosterior& q, const Observation& obs,
                                     const CandidateModel& model, const PriorConfig& prior,
                                     std::span<const ThetaSample> samples) {
    if (samples.empty()) throw std::invalid_argument("gradient batch is empty");
    const auto tables = make_freq_tables(obs.plan);
    const int n = obs.plan.n_all();
    const int kk = q.k();
    const double inv_var = 1.0 / obs.noise_var;
    const double c0 = n * std::log(std::numbers::pi * obs.noise_var);
    const auto b_count = samples.size();

    std::vector<double> twopif(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        twopif[static_cast<std::size_t>(i)] = kTwoPi * tables.f_delay[static_cast<std::size_t>(i)];

    // Delay phasors of every particle, one column per (path, particle).
    std::vector<std::vector<cplx>> dcol(static_cast<std::size_t>(kk));
    for (int k = 0; k < kk; ++k) {
        const auto& pd = q.tau[static_cast<std::size_t>(k)];
        auto& cols = dcol[static_cast<std::size_t>(k)];
        cols.resize(pd.pos_s.size() * static_cast<std::size_t>(n));
        for (std::size_t p = 0; p < pd.pos_s.size(); ++p)
            for (int i = 0; i < n; ++i)
                cols[p * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)] =
                    std::polar(1.0, -twopif[static_cast<std::size_t>(i)] * pd.pos_s[p]);
    }

    EtaGradients out = zero_gradients(q);
    out.n_samples = static_cast<int>(b_count);

    // Per-(k, n) accumulator of ll' + lp over the batch (weight gradients).
    std::vector<std::vector<double>> llp_acc(static_cast<std::size_t>(kk));
    for (int k = 0; k < kk; ++k)
        llp_acc[static_cast<std::size_t>(k)].assign(q.tau[static_cast<std::size_t>(k)].pos_s.size(),
                                                    0.0);

    // Score-estimator batch columns for the Gaussian blocks.
    const std::size_t m_delta = q.delta.size();
    const std::size_t m_phi = q.phi.size();
    std::vector<std::vector<double>> delta_x(m_delta), delta_r(m_delta);
    std::vector<std::vector<double>> phi_x(m_phi), phi_r(m_phi);
    for (auto& v : delta_x) v.reserve(b_count);
    for (auto& v : delta_r) v.reserve(b_count);
    for (auto& v : phi_x) v.reserve(b_count);
    for (auto& v : phi_r) v.reserve(b_count);

    std::vector<cplx> phase(static_cast<std::size_t>(n));
    std::vector<cplx> resid(static_cast<std::size_t>(n));
    std::vector<cplx> cbase(static_cast<std::size_t>(n));
    double g_sum = 0.0;

    for (const ThetaSample& s : samples) {
        // Band phase factors exp(j(phi'_m - 2 pi n f_s delta_m)).
        std::size_t i = 0;
        for (int m = 0; m < obs.plan.n_bands(); ++m) {
            const double phi_m = m == 0 ? 0.0 : s.phi_rel[static_cast<std::size_t>(m - 1)];
            const double del_m = s.delta_s[static_cast<std::size_t>(m)];
            const int n_m = obs.plan.bands[static_cast<std::size_t>(m)].n_sub;
            for (int sub = 0; sub < n_m; ++sub, ++i)
                phase[i] = std::polar(1.0, phi_m - kTwoPi * tables.f_offset[i] * del_m);
        }

        double rss = 0.0;
        for (std::size_t j = 0; j < static_cast<std::size_t>(n); ++j) {
            cplx acc{0.0, 0.0};
            for (int k = 0; k < kk; ++k)
                acc += q.alpha[static_cast<std::size_t>(k)] *
                       dcol[static_cast<std::size_t>(k)]
                            [static_cast<std::size_t>(s.tau_idx[static_cast<std::size_t>(k)]) *
                                 static_cast<std::size_t>(n) +
                             j];
            resid[j] = acc * phase[j] - obs.y[j];
            rss += std::norm(resid[j]);
        }
        const double ll = -c0 - rss * inv_var;
        const double lp = log_prior(model, s.tau_s, s.phi_rel, s.delta_s, prior);
        g_sum += log_q(q, s) - ll - lp;

        for (std::size_t m = 0; m < m_delta; ++m) {
            delta_x[m].push_back(s.delta_s[m]);
            delta_r[m].push_back(-ll - log_normal_ns(s.delta_s[m], 0.0,
                                                     prior.sigma0(static_cast<int>(m)) *
                                                         prior.sigma0(static_cast<int>(m))));
        }
        for (std::size_t m = 0; m < m_phi; ++m) {
            phi_x[m].push_back(s.phi_rel[m]);
            phi_r[m].push_back(-ll);
        }

        for (int k = 0; k < kk; ++k) {
            const auto ku = static_cast<std::size_t>(k);
            const auto& cols = dcol[ku];
            const cplx ak = q.alpha[ku];
            const std::size_t base_off =
                static_cast<std::size_t>(s.tau_idx[ku]) * static_cast<std::size_t>(n);
            for (std::size_t j = 0; j < static_cast<std::size_t>(n); ++j)
                cbase[j] = ak * cols[base_off + j] * phase[j];

            const std::size_t np = q.tau[ku].pos_s.size();
            for (std::size_t p = 0; p < np; ++p) {
                double acc_pos = 0.0, acc_ur = 0.0, acc_uu = 0.0;
                if (p == static_cast<std::size_t>(s.tau_idx[ku])) {
                    for (std::size_t j = 0; j < static_cast<std::size_t>(n); ++j) {
                        const cplx cr = cbase[j] * std::conj(resid[j]);
                        acc_pos += twopif[j] * cr.imag();
                    }
                } else {
                    const std::size_t off = p * static_cast<std::size_t>(n);
                    for (std::size_t j = 0; j < static_cast<std::size_t>(n); ++j) {
                        const cplx c = ak * cols[off + j] * phase[j];
                        const cplx u = c - cbase[j];
                        const cplx ru = resid[j] + u;
                        const cplx cr = c * std::conj(ru);
                        acc_pos += twopif[j] * cr.imag();
                        const cplx ur = u * std::conj(resid[j]);
                        acc_ur += ur.real();
                        acc_uu += std::norm(u);
                    }
                }
                const double grad_lnp = -2.0 * inv_var * acc_pos;
                out.d_pos[ku][p] += -q.tau[ku].w[p] * grad_lnp;
                const double ll_p = -c0 - (rss + 2.0 * acc_ur + acc_uu) * inv_var;
                llp_acc[ku][p] += ll_p + lp;
            }
        }
    }

    const double inv_b = 1.0 / static_cast<double>(b_count);
    out.g_mean = g_sum * inv_b;
    for (int k = 0; k < kk; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        for (std::size_t p = 0; p < out.d_pos[ku].size(); ++p) {
            out.d_pos[ku][p] *= inv_b;
            out.d_w[ku][p] = std::log(q.tau[ku].w[p]) + 1.0 - llp_acc[ku][p] * inv_b;
        }
    }
    for (std::size_t m = 0; m < m_delta; ++m) {
        const double var = q.delta[m].var;
        const double mu = q.delta[m].mean;
        std::vector<double> s_mu(b_count), s_var(b_count);
        for (std::size_t b = 0; b < b_count; ++b) {
            const double d = delta_x[m][b] - mu;
            s_mu[b] = d / var;
            s_var[b] = -0.5 / var + d * d / (2.0 * var * var);
        }
        out.d_delta[m].d_mu = loo_score_mean(s_mu, delta_r[m]);
        out.d_delta[m].d_var = -0.5 / var + loo_score_mean(s_var, delta_r[m]);
    }
    for (std::size_t m = 0; m < m_phi; ++m) {
        const double var = q.phi[m].var;
        const double mu = q.phi[m].mean;
        std::vector<double> s_mu(b_count), s_var(b_count);
        for (std::size_t b = 0; b < b_count; ++b) {
            const double d = phi_x[m][b] - mu;
            s_mu[b] = d / var;
            s_var[b] = -0.5 / var + d * d / (2.0 * var * var);
        }
        out.d_phi[m].d_mu = loo_score_mean(s_mu, phi_r[m]);
        out.d_phi[m].d_var = -0.5 / var + loo_score_mean(s_var, phi_r[m]);
    }
    return out;
}

std::vector<std::vector<double>> grad_particle_positions(const HybridPosterior& q,
                                                         std::span<const ThetaSample> samples,
                                                         const Observation& obs,
                                                         const CandidateModel& model,
                                                         const PriorConfig& prior) {
    (void)model;
    (void)prior;
    if (samples.empty()) throw std::invalid_argument("gradient batch is empty");
    const auto tables = make_freq_tables(obs.plan);
    const int n = obs.plan.n_all();
    std::vector<std::vector<double>> out(q.tau.size());
    for (std::size_t k = 0; k < q.tau.size(); ++k) out[k].assign(q.tau[k].pos_s.size(), 0.0);

    for (const ThetaSample& s : samples) {
        RefinedParams p{q.alpha, s.tau_s, s.phi_rel, s.delta_s};
        for (std::size_t k = 0; k < q.tau.size(); ++k) {
            for (std::size_t j = 0; j < q.tau[k].pos_s.size(); ++j) {
                p.tau_s[k] = q.tau[k].pos_s[j];
                const CMatrix d = steering_matrix(obs.plan, p.tau_s, p.phi_rel, p.delta_s);
                const std::vector<cplx> sig = reconstruct_signal(obs.plan, p);
                double acc = 0.0;
                for (int i = 0; i < n; ++i) {
                    const cplx c = q.alpha[k] * d.at(i, static_cast<int>(k));
                    const cplx r = sig[static_cast<std::size_t>(i)] -
                                   obs.y[static_cast<std::size_t>(i)];
                    acc += kTwoPi * tables.f_delay[static_cast<std::size_t>(i)] *
                           (c * std::conj(r)).imag();
                }
                const double grad_lnp = -2.0 / obs.noise_var * acc;
                out[k][j] += -q.tau[k].w[j] * grad_lnp / static_cast<double>(samples.size());
            }
            p.tau_s[k] = s.tau_s[k];
        }
    }
    return out;
}

std::vector<std::vector<double>> grad_particle_weights(const HybridPosterior& q,
                                                       std::span<const ThetaSample> samples,
                                                       const Observation& obs,
                                                       const CandidateModel& model,
                                                       const PriorConfig& prior) {
    if (samples.empty()) throw std::invalid_argument("gradient batch is empty");
    std::vector<std::vector<double>> out(q.tau.size());
    for (std::size_t k = 0; k < q.tau.size(); ++k) out[k].assign(q.tau[k].pos_s.size(), 0.0);

    for (const ThetaSample& s : samples) {
        RefinedParams p{q.alpha, s.tau_s, s.phi_rel, s.delta_s};
        for (std::size_t k = 0; k < q.tau.size(); ++k) {
            for (std::size_t j = 0; j < q.tau[k].pos_s.size(); ++j) {
                p.tau_s[k] = q.tau[k].pos_s[j];
                const double ll = log_likelihood(obs, p);
                const double lp = log_prior(model, p.tau_s, p.phi_rel, p.delta_s, prior);
                out[k][j] += (ll + lp) / static_cast<double>(samples.size());
            }
            p.tau_s[k] = s.tau_s[k];
        }
    }
    for (std::size_t k = 0; k < q.tau.size(); ++k)
        for (std::size_t j = 0; j < q.tau[k].pos_s.size(); ++j)
            out[k][j] = std::log(q.tau[k].w[j]) + 1.0 - out[k][j];
    return out;
}

GaussianMomentGrads grad_gaussian_moments(const HybridPosterior& q,
                                          std::span<const ThetaSample> samples,
                                          const Observation& obs, const CandidateModel& model,
                                          const PriorConfig& prior) {
    if (samples.empty()) throw std::invalid_argument("gradient batch is empty");
    std::vector<double> g(samples.size());
    for (std::size_t b = 0; b < samples.size(); ++b)
        g[b] = g_value(q, samples[b], obs, model, prior);

    GaussianMomentGrads out;
    out.delta.resize(q.delta.size());
    out.phi.resize(q.phi.size());
    std::vector<double> x(samples.size());
    for (std::size_t m = 0; m < q.delta.size(); ++m) {
        for (std::size_t b = 0; b < samples.size(); ++b) x[b] = samples[b].delta_s[m];
        out.delta[m].d_mu = score_grad_mean(x, q.delta[m].mean, q.delta[m].var, g);
        out.delta[m].d_var = score_grad_var(x, q.delta[m].mean, q.delta[m].var, g);
    }
    for (std::size_t m = 0; m < q.phi.size(); ++m) {
        for (std::size_t b = 0; b < samples.size(); ++b) x[b] = samples[b].phi_rel[m];
        out.phi[m].d_mu = score_grad_mean(x, q.phi[m].mean, q.phi[m].var, g);
        out.phi[m].d_var = score_grad_var(x, q.phi[m].mean, q.phi[m].var, g);
    }
    return out;
}

double score_grad_mean(std::span<const double> x, double mu, double var,
                       std::span<const double> g) {
    if (x.size() != g.size() || x.empty())
        throw std::invalid_argument("score estimator: mismatched or empty batch");
    if (!(var > 0.0)) throw std::invalid_argument("score estimator: variance must be positive");
    double acc = 0.0;
    for (std::size_t b = 0; b < x.size(); ++b) acc += (x[b] - mu) / var * g[b];
    return acc / static_cast<double>(x.size());
}

double score_grad_var(std::span<const double> x, double mu, double var,
                      std::span<const double> g) {
    if (x.size() != g.size() || x.empty())
        throw std::invalid_argument("score estimator: mismatched or empty batch");
    if (!(var > 0.0)) throw std::invalid_argument("score estimator: variance must be positive");
    double acc = 0.0;
    for (std::size_t b = 0; b < x.size(); ++b) {
        const double d = x[b] - mu;
        acc += (-0.5 / var + d * d / (2.0 * var * var)) * g[b];
    }
    return acc / static_cast<double>(x.size());
}

double smooth_gradient(double f_prev, double grad, double rho) {
    return (1.0 - rho) * f_prev + rho * grad;
}

std::vector<double> smooth_gradient(std::span<const double> f_prev, std::span<const double> grad,
                                    double rho) {
    if (f_prev.size() != grad.size())
        throw std::invalid_argument("gradient smoothing: shape mismatch");
    std::vector<double> out(f_prev.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (1.0 - rho) * f_prev[i] + rho * grad[i];
    return out;
}

EtaGradients smooth_gradient(const EtaGradients& f_prev, const EtaGradients& grad, double rho) {
    if (f_prev.d_pos.size() != grad.d_pos.size() || f_prev.d_w.size() != grad.d_w.size() ||
        f_prev.d_delta.size() != grad.d_delta.size() || f_prev.d_phi.size() != grad.d_phi.size())
        throw std::invalid_argument("gradient smoothing: shape mismatch");
    EtaGradients out = f_prev;
    for (std::size_t k = 0; k < out.d_pos.size(); ++k) {
        out.d_pos[k] = smooth_gradient(f_prev.d_pos[k], grad.d_pos[k], rho);
        out.d_w[k] = smooth_gradient(f_prev.d_w[k], grad.d_w[k], rho);
    }
    for (std::size_t m = 0; m < out.d_delta.size(); ++m) {
        out.d_delta[m].d_mu = smooth_gradient(f_prev.d_delta[m].d_mu, grad.d_delta[m].d_mu, rho);
        out.d_delta[m].d_var =
            smooth_gradient(f_prev.d_delta[m].d_var, grad.d_delta[m].d_var, rho);
    }
    for (std::size_t m = 0; m < out.d_phi.size(); ++m) {
        out.d_phi[m].d_mu = smooth_gradient(f_prev.d_phi[m].d_mu, grad.d_phi[m].d_mu, rho);
        out.d_phi[m].d_var = smooth_gradient(f_prev.d_phi[m].d_var, grad.d_phi[m].d_var, rho);
    }
    out.g_mean = grad.g_mean;
    out.n_samples = grad.n_samples;
    return out;
}

EtaGradients scale_gradients(EtaGradients g, double zeta_v) {
    for (auto& row : g.d_pos)
        for (double& x : row) x *= zeta_v;
    for (auto& row : g.d_w)
        for (double& x : row) x *= zeta_v;
    for (auto& m : g.d_delta) {
        m.d_mu *= zeta_v;
        m.d_var *= zeta_v;
    }
    for (auto& m : g.d_phi) {
        m.d_mu *= zeta_v;
        m.d_var *= zeta_v;
    }
    return g;
}

std::vector<double> project_simplex_floor(std::span<const double> v, double eps) {
    const auto nn = v.size();
    if (nn == 0) throw std::invalid_argument("simplex projection: empty vector");
    if (eps < 0.0 || eps * static_cast<double>(nn) > 1.0 + 1e-15)
        throw std::invalid_argument("simplex projection: infeasible floor");
    const double mass = 1.0 - eps * static_cast<double>(nn);

    std::vector<double> u(nn);
    for (std::size_t i = 0; i < nn; ++i) u[i] = v[i] - eps;
    std::vector<double> sorted = u;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());

    double cum = 0.0, theta = 0.0;
    std::size_t active = 0;
    for (std::size_t j = 0; j < nn; ++j) {
        cum += sorted[j];
        const double th = (cum - mass) / static_cast<double>(j + 1);
        if (sorted[j] - th > 0.0) {
            active = j + 1;
            theta = th;
        }
    }
    if (active == 0) {
        // All mass collapses onto the floor (possible only when mass == 0).
        return std::vector<double>(nn, eps);
    }
    std::vector<double> out(nn);
    for (std::size_t i = 0; i < nn; ++i) out[i] = std::max(u[i] - theta, 0.0) + eps;
    return out;
}

std::vector<double> solve_surrogate(std::span<const double> x, std::span<const double> f,
                                    double cap, BoxConstraint c) {
    if (x.size() != f.size()) throw std::invalid_argument("surrogate: shape mismatch");
    if (!(cap > 0.0)) throw std::invalid_argument("surrogate: step cap must be positive");
    if (!(c.lo <= c.hi)) throw std::invalid_argument("surrogate: inverted box");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = std::clamp(x[i] - cap * f[i], c.lo, c.hi);
    return out;
}

std::vector<double> solve_surrogate(std::span<const double> x, std::span<const double> f,
                                    double cap, SimplexConstraint c) {
    if (x.size() != f.size()) throw std::invalid_argument("surrogate: shape mismatch");
    if (!(cap > 0.0)) throw std::invalid_argument("surrogate: step cap must be positive");
    std::vector<double> moved(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) moved[i] = x[i] - cap * f[i];
    return project_simplex_floor(moved, c.eps);
}

double location_cap(double range, double fisher, double f_inf, const GammaPolicy& p) {
    double cap = p.range_quad * range * range;
    if (fisher > 0.0) cap = std::min(cap, p.kappa_fisher / fisher);
    if (f_inf > 0.0) cap = std::min(cap, p.range_frac * range / f_inf);
    return cap;
}

double variance_cap(double var, double f_abs, const GammaPolicy& p) {
    double cap = p.range_quad * var * var;
    if (f_abs > 0.0) cap = std::min(cap, p.range_frac * var / f_abs);
    return cap;
}

double weight_cap(double f_inf, const GammaPolicy& p) {
    double cap = p.range_quad;
    if (f_inf > 0.0) cap = std::min(cap, p.range_frac / f_inf);
    return cap;
}

FisherProxies compute_fisher_proxies(std::span<const cplx> alpha, const Observation& obs,
                                     const PriorConfig& prior) {
    const auto tables = make_freq_tables(obs.plan);
    const double inv_var = 1.0 / obs.noise_var;
    double power = 0.0;
    for (const cplx& a : alpha) power += std::norm(a);

    FisherProxies fp;
    double s2_delay = 0.0;
    for (double f : tables.f_delay) s2_delay += kTwoPi * f * kTwoPi * f;
    fp.pos.resize(alpha.size());
    for (std::size_t k = 0; k < alpha.size(); ++k)
        fp.pos[k] = 2.0 * std::norm(alpha[k]) * inv_var * s2_delay;

    const int m_bands = obs.plan.n_bands();
    fp.mu_delta.resize(static_cast<std::size_t>(m_bands));
    fp.mu_phi.resize(static_cast<std::size_t>(m_bands - 1));
    std::size_t i = 0;
    for (int m = 0; m < m_bands; ++m) {
        const int n_m = obs.plan.bands[static_cast<std::size_t>(m)].n_sub;
        double s2_off = 0.0;
        for (int sub = 0; sub < n_m; ++sub, ++i) {
            const double w = kTwoPi * tables.f_offset[i];
            s2_off += w * w;
        }
        const double s0 = prior.sigma0(m);
        fp.mu_delta[static_cast<std::size_t>(m)] =
            2.0 * power * inv_var * s2_off + 1.0 / (s0 * s0);
        if (m > 0)
            fp.mu_phi[static_cast<std::size_t>(m - 1)] = 2.0 * power * n_m * inv_var;
    }
    return fp;
}

HybridPosterior update_eta(const HybridPosterior& q, const EtaGradients& f,
                           const StepSchedule& sched, int t, const FisherProxies& fisher,
                           const PriorConfig& prior, const GammaPolicy& policy) {
    if (f.d_pos.size() != q.tau.size() || f.d_delta.size() != q.delta.size() ||
        f.d_phi.size() != q.phi.size())
        throw std::invalid_argument("eta update: gradient shape mismatch");
    const double gamma = step_sizes(sched, t).gamma;
    HybridPosterior out = q;

    for (std::size_t k = 0; k < q.tau.size(); ++k) {
        const auto& pd = q.tau[k];
        const double range = pd.hi_s - pd.lo_s;
        if (range > 0.0) {
            const double cap =
                location_cap(range, fisher.pos.size() > k ? fisher.pos[k] : 0.0,
                             max_abs(f.d_pos[k]), policy);
            if (cap > 0.0) {
                const auto bar =
                    solve_surrogate(pd.pos_s, f.d_pos[k], cap, BoxConstraint{pd.lo_s, pd.hi_s});
                // the convex mix of two in-box points can land an ulp outside
                // the box; positions are hard-support state, so re-clamp
                for (std::size_t p = 0; p < bar.size(); ++p)
                    out.tau[k].pos_s[p] = std::clamp(
                        (1.0 - gamma) * pd.pos_s[p] + gamma * bar[p], pd.lo_s, pd.hi_s);
            }
        }

        std::vector<double> fc = f.d_w[k];
        const double fbar = mean_of(fc);
        for (double& x : fc) x -= fbar;
        const double cap_w = weight_cap(max_abs(fc), policy);
        const auto wbar = solve_surrogate(pd.w, fc, cap_w, SimplexConstraint{q.eps_w});
        double sum = 0.0;
        for (std::size_t p = 0; p < wbar.size(); ++p) {
            out.tau[k].w[p] = (1.0 - gamma) * pd.w[p] + gamma * wbar[p];
            sum += out.tau[k].w[p];
        }
        for (double& w : out.tau[k].w) w /= sum;
    }

    for (std::size_t m = 0; m < q.delta.size(); ++m) {
        const double s0 = prior.sigma0(static_cast<int>(m));
        const double range = 4.0 * s0;
        const double cap_mu =
            location_cap(range, fisher.mu_delta.size() > m ? fisher.mu_delta[m] : 0.0,
                         std::abs(f.d_delta[m].d_mu), policy);
        const double mu_bar = q.delta[m].mean - cap_mu * f.d_delta[m].d_mu;
        out.delta[m].mean = (1.0 - gamma) * q.delta[m].mean + gamma * mu_bar;

        const double var = q.delta[m].var;
        const double cap_v = variance_cap(var, std::abs(f.d_delta[m].d_var), policy);
        const double var_bar = std::max(var - cap_v * f.d_delta[m].d_var, q.var_floor_delta);
        out.delta[m].var = (1.0 - gamma) * var + gamma * var_bar;
    }

    for (std::size_t m = 0; m < q.phi.size(); ++m) {
        const double cap_mu =
            location_cap(kTwoPi, fisher.mu_phi.size() > m ? fisher.mu_phi[m] : 0.0,
                         std::abs(f.d_phi[m].d_mu), policy);
        const double mu_bar =
            std::clamp(q.phi[m].mean - cap_mu * f.d_phi[m].d_mu, 0.0, kTwoPi);
        out.phi[m].mean = (1.0 - gamma) * q.phi[m].mean + gamma * mu_bar;

        const double var = q.phi[m].var;
        const double cap_v = variance_cap(var, std::abs(f.d_phi[m].d_var), policy);
        const double var_bar = std::max(var - cap_v * f.d_phi[m].d_var, q.var_floor_phi);
        out.phi[m].var = (1.0 - gamma) * var + gamma * var_bar;
    }

    out.validate();
    return out;
}

LambdaHat lambda_hat(const HybridPosterior& q) {
    const Estimates e = extract_estimates(q);
    return {e.tau_map_s, e.phi_hat, e.delta_hat_s};
}

std::vector<cplx> ls_alpha(const Observation& obs, const LambdaHat& lam) {
    const CMatrix d = steering_matrix(obs.plan, lam.tau_s, lam.phi_rel, lam.delta_s);
    return solve_ls_gains(d, obs.y).gains;
}

std::vector<cplx> smooth_alpha(std::span<const cplx> alpha_prev, std::span<const cplx> alpha_ml,
                               double gamma_t) {
    if (alpha_prev.size() != alpha_ml.size())
        throw std::invalid_argument("gain smoothing: shape mismatch");
    std::vector<cplx> out(alpha_prev.size());
    for (std::size_t k = 0; k < out.size(); ++k)
        out[k] = (1.0 - gamma_t) * alpha_prev[k] + gamma_t * alpha_ml[k];
    return out;
}

std::vector<double> grad_zeta(std::span<const double> g_means, std::span<const double> zeta,
                              std::span<const double> zeta0, double eps_zeta) {
    if (g_means.size() != zeta.size() || zeta.size() != zeta0.size())
        throw std::invalid_argument("zeta gradient: shape mismatch");
    std::vector<double> out(zeta.size());
    for (std::size_t v = 0; v < zeta.size(); ++v) {
        if (!(zeta[v] >= eps_zeta))
            throw std::invalid_argument("zeta gradient: weight below floor");
        out[v] = g_means[v] + std::log(zeta[v]) + 1.0 - std::log(zeta0[v]);
    }
    return out;
}

std::vector<double> update_zeta(std::span<const double> zeta, std::span<const double> f_zeta,
                                const StepSchedule& sched, int t, double eps_zeta) {
    const double gamma = step_sizes(sched, t).gamma;
    // center the row (a uniform shift is absorbed by the simplex projection)
    // and cap the unconstrained step at kZetaCap of the unit range
    std::vector<double> fc(f_zeta.begin(), f_zeta.end());
    double fbar = 0.0;
    for (double x : fc) fbar += x;
    if (!fc.empty()) fbar /= static_cast<double>(fc.size());
    double f_inf = 0.0;
    for (double& x : fc) {
        x -= fbar;
        f_inf = std::max(f_inf, std::abs(x));
    }
    double cap = kZetaCap;
    if (f_inf > 0.0) cap = std::min(cap, kZetaCap / f_inf);
    const auto bar = solve_surrogate(zeta, fc, cap, SimplexConstraint{eps_zeta});
    std::vector<double> out(zeta.size());
    double sum = 0.0;
    for (std::size_t v = 0; v < zeta.size(); ++v) {
        out[v] = (1.0 - gamma) * zeta[v] + gamma * bar[v];
        sum += out[v];
    }
    for (double& z : out) z /= sum;
    // the mix and renormalization can leave a floored entry a few ulps under
    // the floor; repair it from the largest entry so the floor stays exact
    std::size_t imax = 0;
    for (std::size_t v = 1; v < out.size(); ++v)
        if (out[v] > out[imax]) imax = v;
    for (std::size_t v = 0; v < out.size(); ++v) {
        if (v != imax && out[v] < eps_zeta) {
            out[imax] -= eps_zeta - out[v];
            out[v] = eps_zeta;
        }
    }
    return out;
}

double stationarity_residual(const HybridPosterior& q, const Observation& obs,
                             const CandidateModel& model, const PriorConfig& prior, int b_probe,
                             Rng& rng) {
    if (b_probe < 2) throw std::invalid_argument("stationarity probe needs at least 2 samples");
    std::vector<ThetaSample> samples;
    samples.reserve(static_cast<std::size_t>(b_probe));
    for (int b = 0; b < b_probe; ++b) samples.push_back(sample_theta(q, rng));
    const EtaGradients g = compute_batch_gradients(q, obs, model, prior, samples);
    const FisherProxies fisher = compute_fisher_proxies(q.alpha, obs, prior);
    const ProbeCaps probe;

    double worst = 0.0;
    for (std::size_t k = 0; k < q.tau.size(); ++k) {
        const auto& pd = q.tau[k];
        const double range = pd.hi_s - pd.lo_s;
        if (range > 0.0) {
            double cap = probe.range_quad * range * range;
            if (fisher.pos[k] > 0.0) cap = std::min(cap, probe.kappa_fisher / fisher.pos[k]);
            const auto bar =
                solve_surrogate(pd.pos_s, g.d_pos[k], cap, BoxConstraint{pd.lo_s, pd.hi_s});
            for (std::size_t p = 0; p < bar.size(); ++p)
                worst = std::max(worst, std::abs(bar[p] - pd.pos_s[p]) / range);
        }

        std::vector<double> fc = g.d_w[k];
        const double fbar = mean_of(fc);
        for (double& x : fc) x -= fbar;
        const auto wbar = solve_surrogate(pd.w, fc, probe.range_quad, SimplexConstraint{q.eps_w});
        for (std::size_t p = 0; p < wbar.size(); ++p)
            worst = std::max(worst, std::abs(wbar[p] - pd.w[p]));
    }

    for (std::size_t m = 0; m < q.delta.size(); ++m) {
        const double s0 = prior.sigma0(static_cast<int>(m));
        const double range = 4.0 * s0;
        double cap = probe.range_quad * range * range;
        if (fisher.mu_delta[m] > 0.0) cap = std::min(cap, probe.kappa_fisher / fisher.mu_delta[m]);
        worst = std::max(worst, cap * std::abs(g.d_delta[m].d_mu) / range);

        const double var = q.delta[m].var;
        const double cap_v = probe.range_quad * var * var;
        const double var_bar = std::max(var - cap_v * g.d_delta[m].d_var, q.var_floor_delta);
        worst = std::max(worst, std::abs(var_bar - var) / var);
    }
    for (std::size_t m = 0; m < q.phi.size(); ++m) {
        double cap = probe.range_quad * kTwoPi * kTwoPi;
        if (fisher.mu_phi[m] > 0.0) cap = std::min(cap, probe.kappa_fisher / fisher.mu_phi[m]);
        const double mu_bar =
            std::clamp(q.phi[m].mean - cap * g.d_phi[m].d_mu, 0.0, kTwoPi);
        worst = std::max(worst, std::abs(mu_bar - q.phi[m].mean) / kTwoPi);

        const double var = q.phi[m].var;
        const double cap_v = probe.range_quad * var * var;
        const double var_bar = std::max(var - cap_v * g.d_phi[m].d_var, q.var_floor_phi);
        worst = std::max(worst, std::abs(var_bar - var) / var);
    }
    return worst;
}

} // namespace mbvbi

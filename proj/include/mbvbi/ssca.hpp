#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "mbvbi/model_space.hpp"
#include "mbvbi/posterior.hpp"
#include "mbvbi/signal_model.hpp"

namespace mbvbi {

/// One power-law step sequence a/(b+t)^kappa with the t=0 value pinned to 1.
struct PowerStep {
    double a = 5.0;
    double b = 24.0;
    double kappa = 0.51;

    double at(int t) const { return t == 0 ? 1.0 : a / std::pow(b + t, kappa); }
};

struct StepSchedule {
    PowerStep rho{5.0, 24.0, 0.51};
    PowerStep gamma{5.0, 19.0, 0.55};

    /// Requires 0.5 < kappa_rho < kappa_gamma <= 1 (the decay-rate window
    /// under which the smoothed iterates converge).
    void validate() const;
};

struct StepSizes {
    double rho = 1.0;
    double gamma = 1.0;
};

StepSizes step_sizes(const StepSchedule& s, int t);

struct MomentGrad {
    double d_mu = 0.0;
    double d_var = 0.0;
};

/// Batch gradient of the per-model objective with respect to every
/// variational parameter block, plus the batch mean of g (consumed by the
/// model-weight update).
struct EtaGradients {
    std::vector<std::vector<double>> d_pos; ///< [K][N_p]
    std::vector<std::vector<double>> d_w;   ///< [K][N_p]
    std::vector<MomentGrad> d_delta;        ///< per band
    std::vector<MomentGrad> d_phi;          ///< per band after the first
    double g_mean = 0.0;
    int n_samples = 0;
};

EtaGradients zero_gradients(const HybridPosterior& q);

/// Fused single-pass estimator of all blocks from one sample batch.  Moment
/// gradients use the score-function form with a leave-one-out baseline and
/// the per-variable conditional objective (identical expectation to the
/// plain estimator, far lower variance); the analytic entropy derivative is
/// added for variances.  Position and weight gradients follow the
/// conditional-likelihood formulas exactly.
EtaGradients compute_batch_gradients(const HybridPosterior& q, const Observation& obs,
                                     const CandidateModel& model, const PriorConfig& prior,
                                     std::span<const ThetaSample> samples);

/// Reference estimators (one formula each, no fusion or variance reduction).
/// They define the estimator contracts; the fused path above is checked
/// against them where the formulas coincide.
std::vector<std::vector<double>> grad_particle_positions(const HybridPosterior& q,
                                                         std::span<const ThetaSample> samples,
                                                         const Observation& obs,
                                                         const CandidateModel& model,
                                                         const PriorConfig& prior);

std::vector<std::vector<double>> grad_particle_weights(const HybridPosterior& q,
                                                       std::span<const ThetaSample> samples,
                                                       const Observation& obs,
                                                       const CandidateModel& model,
                                                       const PriorConfig& prior);

struct GaussianMomentGrads {
    std::vector<MomentGrad> delta;
    std::vector<MomentGrad> phi;
};

/// Plain score-function moment estimator: d_mu = mean_b[(x-mu)/var * g],
/// d_var = mean_b[(-1/(2 var) + (x-mu)^2/(2 var^2)) * g].
GaussianMomentGrads grad_gaussian_moments(const HybridPosterior& q,
                                          std::span<const ThetaSample> samples,
                                          const Observation& obs, const CandidateModel& model,
                                          const PriorConfig& prior);

/// Scalar score-estimator cores over one batch.
double score_grad_mean(std::span<const double> x, double mu, double var,
                       std::span<const double> g);
double score_grad_var(std::span<const double> x, double mu, double var,
                      std::span<const double> g);

/// f_t = (1 - rho) f_prev + rho grad.
double smooth_gradient(double f_prev, double grad, double rho);
std::vector<double> smooth_gradient(std::span<const double> f_prev, std::span<const double> grad,
                                    double rho);
EtaGradients smooth_gradient(const EtaGradients& f_prev, const EtaGradients& grad, double rho);

/// Multiplies every eta block by the model weight (the objective couples the
/// per-model divergence through zeta_v).
EtaGradients scale_gradients(EtaGradients g, double zeta_v);

struct BoxConstraint {
    double lo = 0.0;
    double hi = 1.0;
};

struct SimplexConstraint {
    double eps = 0.0;
};

/// Euclidean projection onto { x : sum x = 1, x >= eps }.
std::vector<double> project_simplex_floor(std::span<const double> v, double eps);

/// Minimizer of f^T (x - x_t) + ||x - x_t||^2 / (2 cap) over the constraint
/// set, i.e. the projection of x_t - cap * f.
std::vector<double> solve_surrogate(std::span<const double> x, std::span<const double> f,
                                    double cap, BoxConstraint c);
std::vector<double> solve_surrogate(std::span<const double> x, std::span<const double> f,
                                    double cap, SimplexConstraint c);

/// Surrogate step caps.  Location and variance blocks are capped three ways:
/// a quadratic-in-range ceiling, an inverse-curvature (Newton-like) ceiling,
/// and a hard bound of range_frac of the block range per step.
struct GammaPolicy {
    double range_frac = 0.1;
    double range_quad = 1e-2;
    double kappa_fisher = 0.1;
};

double location_cap(double range, double fisher, double f_inf, const GammaPolicy& p);
double variance_cap(double var, double f_abs, const GammaPolicy& p);
double weight_cap(double f_inf, const GammaPolicy& p);

/// Diagonal curvature surrogates of the log-likelihood, used only to scale
/// steps (never to precondition the estimators themselves).
struct FisherProxies {
    std::vector<double> pos;      ///< per path
    std::vector<double> mu_delta; ///< per band
    std::vector<double> mu_phi;   ///< per band after the first
};

FisherProxies compute_fisher_proxies(std::span<const cplx> alpha, const Observation& obs,
                                     const PriorConfig& prior);

/// One smoothed update of every eta block from the smoothed (and
/// zeta-scaled) gradient f: per-block surrogate solve, then
/// eta <- (1-gamma_t) eta + gamma_t eta_bar, then re-projection of the type
/// invariants (weight floor/sum, variance floors, phase box).
HybridPosterior update_eta(const HybridPosterior& q, const EtaGradients& f,
                           const StepSchedule& sched, int t, const FisherProxies& fisher,
                           const PriorConfig& prior, const GammaPolicy& policy);

struct LambdaHat {
    std::vector<double> tau_s;
    std::vector<double> phi_rel;
    std::vector<double> delta_s;
};

/// Max-weight particle per path plus the Gaussian means.
LambdaHat lambda_hat(const HybridPosterior& q);

/// Exact normal-equations gain fit at the point estimate Lambda_hat.
std::vector<cplx> ls_alpha(const Observation& obs, const LambdaHat& lam);

std::vector<cplx> smooth_alpha(std::span<const cplx> alpha_prev, std::span<const cplx> alpha_ml,
                               double gamma_t);

/// Model-weight gradient: g_mean_v + ln zeta_v + 1 - ln zeta0_v.
std::vector<double> grad_zeta(std::span<const double> g_means, std::span<const double> zeta,
                              std::span<const double> zeta0, double eps_zeta);

/// Simplex-constrained surrogate step (fixed cap 0.1) followed by gamma_t
/// smoothing and exact renormalization.
std::vector<double> update_zeta(std::span<const double> zeta, std::span<const double> f_zeta,
                                const StepSchedule& sched, int t, double eps_zeta);

/// Projected-gradient stationarity residual at q: fresh-batch gradients,
/// deliberately small probe caps, and the per-block range-normalized
/// distance between q and its projected step.  The model-weight factor is
/// not part of the probe.
double stationarity_residual(const HybridPosterior& q, const Observation& obs,
                             const CandidateModel& model, const PriorConfig& prior, int b_probe,
                             Rng& rng);

} // namespace mbvbi

#pragma once

#include <string>
#include <vector>

#include "mbvbi/model_space.hpp"
#include "mbvbi/rng.hpp"
#include "mbvbi/signal_model.hpp"

namespace mbvbi {

/// Discrete delay marginal: weighted particles confined to one path's
/// uncertainty interval.
struct ParticleDist {
    std::vector<double> pos_s;
    std::vector<double> w;
    double lo_s = 0.0;
    double hi_s = 0.0;

    int n() const { return static_cast<int>(pos_s.size()); }
    void validate(double eps_w) const;
};

struct GaussianDist {
    double mean = 0.0;
    double var = 1.0;
};

/// Factorized variational posterior of one candidate model:
/// particles for each delay, Gaussians for timing offsets (all bands) and
/// relative phases (bands 2..M), and a point-mass gain vector.
struct HybridPosterior {
    std::vector<ParticleDist> tau;
    std::vector<cplx> alpha;
    std::vector<GaussianDist> delta;
    std::vector<GaussianDist> phi;
    double eps_w = 1e-5;
    double var_floor_delta = 1e-24;
    double var_floor_phi = 1e-6;

    int k() const { return static_cast<int>(tau.size()); }
    void validate() const;
};

/// One joint draw from the posterior; tau_idx records which particle was
/// selected per path (needed for the discrete log-mass and weight updates).
struct ThetaSample {
    std::vector<double> tau_s;
    std::vector<int> tau_idx;
    std::vector<double> phi_rel;
    std::vector<double> delta_s;
    std::vector<cplx> alpha;
};

struct PosteriorConfig {
    int n_particles = 10;
    /// Initial variance of the relative-phase Gaussians (rad^2); 0 selects
    /// (pi/2)^2 capped by the same curvature bound as delta, so high-SNR
    /// runs start near the achievable posterior width.
    double phi_init_var = 0.0;
    /// Initial timing-offset variance (s^2); 0 selects the prior variance
    /// capped by a curvature bound so high-SNR runs start near the
    /// achievable posterior width.
    double delta_init_var = 0.0;
    double var_floor_delta = 1e-24; ///< (1e-3 ns)^2
    double var_floor_phi = 1e-6;    ///< (1e-3 rad)^2

    double eps_w() const { return 1e-4 / n_particles; }
};

/// Uniform inclusive particle grid over each path interval, equal weights,
/// Gaussians centered on the coarse phase/offset estimates, and an LS gain
/// fit at the seed delays.
HybridPosterior init_posterior(const CandidateModel& model, const CoarseEstimate& coarse,
                               const BandPlan& plan, const Observation& obs,
                               const PriorConfig& prior, const PosteriorConfig& cfg);

ThetaSample sample_theta(const HybridPosterior& q, Rng& rng);

/// ln q(theta): particle log-masses plus Gaussian log-densities (timing
/// offsets per ns, phases per rad).  The gain point mass contributes zero.
double log_q(const HybridPosterior& q, const ThetaSample& s);

/// Per-sample objective g = ln q(theta) - ln p(y | theta) - ln p(theta).
/// A sample outside the prior support yields +inf.
double g_value(const HybridPosterior& q, const ThetaSample& s, const Observation& obs,
               const CandidateModel& model, const PriorConfig& prior);

struct Estimates {
    std::vector<double> tau_map_s;  ///< argmax-weight particle per path
    std::vector<double> tau_mmse_s; ///< weight-averaged position per path
    std::vector<double> phi_hat;
    std::vector<double> delta_hat_s;
    std::vector<cplx> alpha_hat;
};

Estimates extract_estimates(const HybridPosterior& q);

/// Deterministic, full-precision text snapshot (fixture format).
std::string to_snapshot_text(const HybridPosterior& q);

} // namespace mbvbi

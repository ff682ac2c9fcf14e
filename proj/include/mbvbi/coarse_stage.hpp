#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "mbvbi/signal_model.hpp"

namespace mbvbi {

/// Coarse-stage channel estimate handed to the refinement stage.
/// tau_hat is sorted ascending; intervals are half-widths around each delay.
/// phi_rel_hat has n_bands-1 entries, delta_hat one per band.
struct CoarseEstimate {
    int k_hat = 0;
    std::vector<double> tau_hat_s;
    std::vector<double> interval_half_width_s;
    std::vector<cplx> alpha_hat;
    std::vector<double> phi_rel_hat;
    std::vector<double> delta_hat_s;
    bool merged_fallback = false; ///< fewer separable peaks than requested
};

enum class OrderCriterion { aic, mdl, bic };

struct CoarseConfig {
    double grid_start_s = 0.0;
    double grid_stop_s = 500e-9;
    double grid_step_s = 1e-9;
    /// Minimum spacing between picked peaks; 0 selects 1 / max_bandwidth.
    double min_peak_sep_s = 0.0;
};

struct IntervalPolicy {
    /// Fixed half-width of the delay uncertainty interval; 0 selects the
    /// bandwidth-derived default 1 / (2 * max_bandwidth).
    double half_width_s = 0.0;

    double resolve(const BandPlan& plan) const;
};

std::vector<double> make_delay_grid(const CoarseConfig& cfg);

/// Noncoherent multiband matched-filter delay profile,
///   P(tau) = sum_m |sum_n w_n y_m^(n) e^{+j 2pi n f_{s,m} tau}|^2 / (sum_n w_n)^2,
/// with a Hann taper w_n.  Per-band correlation avoids the unknown inter-band
/// phases; values are nonnegative and peak near true delays (coarse
/// resolution ~ 1/bandwidth).  A single path of gain alpha peaks at |alpha|^2.
std::vector<double> delay_profile(const Observation& obs, std::span<const double> grid);

/// Delay candidates ranked by profile height under a minimum-separation
/// constraint.  When fewer separable local maxima exist than requested the
/// constraint is relaxed stepwise; *relaxed reports that.
std::vector<double> ranked_peak_delays(std::span<const double> profile,
                                       std::span<const double> grid,
                                       int count, double min_sep_s, bool* relaxed = nullptr);

/// Information-criterion score -2 ln p(y | theta_hat_K) + eta * K for the
/// order-K coarse fit (top-K profile peaks, per-band LS gains, known
/// noise variance).
double order_criterion_score(const Observation& obs, int k, double eta,
                             const CoarseConfig& cfg = {});

/// Minimizes the criterion over K = 1..k_max.  eta defaults to 2 for AIC and
/// ln(N_all) for MDL/BIC; eta_override (when positive) replaces it.
int estimate_order(const Observation& obs, int k_max, OrderCriterion criterion,
                   const CoarseConfig& cfg = {}, double eta_override = 0.0);

/// Peak-picks k_hat delays from the profile and fits common complex gains by
/// LS at (tau_hat, phi'=0, delta=0).  Relative phases and timing offsets
/// default to zero; their priors are tight or uniform and the refinement
/// stage estimates them.
CoarseEstimate coarse_estimate(const Observation& obs, int k_hat,
                               const IntervalPolicy& policy = {},
                               const CoarseConfig& cfg = {});

/// Truth-seeded coarse estimate for controlled experiments: Gaussian
/// perturbations on each parameter group plus an optional directive to merge
/// two paths into one (gain-weighted delay, summed gain), emulating an
/// unresolvable pair.
struct OracleErrorSpec {
    double tau_sigma_s = 0.0;
    double phi_sigma = 0.0;
    double delta_sigma_s = 0.0;
    double alpha_sigma = 0.0;
    std::optional<std::pair<int, int>> merge; ///< 0-based path indices, i < j
    double interval_half_width_s = 0.0;       ///< 0 selects the policy default
};

CoarseEstimate oracle_coarse(const ChannelTruth& truth, const BandPlan& plan,
                             const OracleErrorSpec& spec, std::uint64_t seed);

} // namespace mbvbi

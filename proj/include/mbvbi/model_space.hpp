#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mbvbi/coarse_stage.hpp"

namespace mbvbi {

/// One candidate path configuration: delay seeds with per-path uncertainty
/// intervals.  Model 1 keeps the coarse estimate as-is; each further model
/// replaces one coarse path by a symmetric pair of seeds, probing whether
/// that path hides two arrivals.
struct CandidateModel {
    int id = 0; ///< 1-based; model 1 is the unsplit candidate
    int k = 0;
    std::vector<double> tau_seeds_s;
    std::vector<double> interval_half_width_s;
    std::optional<int> split_origin; ///< 0-based coarse path index that was split

    double interval_lo(int path) const {
        return tau_seeds_s[static_cast<std::size_t>(path)] -
               interval_half_width_s[static_cast<std::size_t>(path)];
    }
    double interval_hi(int path) const {
        return tau_seeds_s[static_cast<std::size_t>(path)] +
               interval_half_width_s[static_cast<std::size_t>(path)];
    }
};

struct ModelEnsemble {
    std::vector<CandidateModel> models;
    std::vector<double> zeta;  ///< current model posterior weights (simplex)
    std::vector<double> zeta0; ///< prior weights
};

/// Builds the unsplit model plus one split model per candidate path, ranked
/// by descending coarse gain magnitude (split_count of them).  Split seeds
/// sit at tau_hat -/+ tau_d (clipped at zero), inherit the parent interval
/// half-width, and tau_d is halved when a seed would leave the union of the
/// coarse intervals.
std::vector<CandidateModel> build_candidates(const CoarseEstimate& coarse,
                                             int split_count, double tau_d_s);

/// Uniform (or normalized custom) prior over n_models candidates.
std::vector<double> model_prior(int n_models, const std::vector<double>* weights = nullptr);

struct PriorConfig {
    /// Per-band timing-offset prior stddev (seconds); bands beyond the vector
    /// fall back to sigma0_default_s.
    std::vector<double> sigma0_delta_s;
    double sigma0_default_s = 1e-10;

    double sigma0(int band) const {
        const auto b = static_cast<std::size_t>(band);
        return b < sigma0_delta_s.size() ? sigma0_delta_s[b] : sigma0_default_s;
    }
};

/// ln p(theta | model): per-path uniform delay densities over the model
/// intervals (-inf outside), uniform relative phases, Gaussian timing-offset
/// priors.  Delay densities are per nanosecond (see densities.hpp).
double log_prior(const CandidateModel& model,
                 std::span<const double> tau_s,
                 std::span<const double> phi_rel,
                 std::span<const double> delta_s,
                 const PriorConfig& prior);

} // namespace mbvbi

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mbvbi/autofocus.hpp"
#include "mbvbi/coarse_stage.hpp"
#include "mbvbi/model_space.hpp"
#include "mbvbi/posterior.hpp"
#include "mbvbi/ssca.hpp"

namespace mbvbi {

struct RunConfig {
    int b_min = 10; ///< per-iteration mini-batch floor B
    double kappa1 = 0.5;
    double kappa2 = 0.5; ///< non-finite disables the dominance rule
    int max_iters = 200;
    double tol_zeta = 1e-3;
    double tol_eta = 1e-3;
    int window = 5;
    StepSchedule schedule;
    std::uint64_t seed = 1;
    int split_count = 2;
    double tau_d_s = 0.0; ///< split displacement; 0 selects 1/max bandwidth
    double eps_zeta = 1e-6;
    PriorConfig prior;
    PosteriorConfig posterior; ///< N_p and the init/floor knobs live here
    GammaPolicy gamma_policy;
    bool record_trace = true;

    void validate() const;
};

struct ModelIterSummary {
    int b_v = 0;
    double g_mean = 0.0;
    double delta_eta = 0.0; ///< normalized per-block max change this iteration
};

struct IterationRecord {
    int t = 0;
    double rho = 1.0;
    double gamma = 1.0;
    int n_virtual = 0;
    bool dominance = false;
    std::vector<double> zeta; ///< post-update
    std::vector<ModelIterSummary> models;
    double delta_eta = 0.0;
    double delta_zeta = 0.0;
};

struct EstimateReport {
    int best_model = 0; ///< 0-based ensemble index, ties resolved to lowest
    std::vector<double> zeta_final;
    Estimates estimates; ///< of the best model
    int iters_run = 0;
    bool converged = false;
    long long total_samples = 0;
    std::vector<CandidateModel> models;
    std::vector<HybridPosterior> posteriors; ///< final state, one per model
    std::vector<IterationRecord> trace;      ///< empty unless record_trace
};

/// Normalized worst-block parameter change between two posterior states of
/// the same shape (positions by interval width, weights absolutely, means by
/// their natural ranges, variances relatively).  Gains are excluded; they
/// are point estimates maintained by the LS step, not variational
/// parameters.
double eta_delta_norm(const HybridPosterior& prev, const HybridPosterior& next,
                      const PriorConfig& prior);

/// Full multi-model run: candidate construction, per-model posterior
/// initialization, the allocate/sample/update iteration with the model-weight
/// update at each iteration barrier, and report extraction from the
/// highest-weight model.
EstimateReport run_mm_spvbi(const Observation& obs, const CoarseEstimate& coarse,
                            const RunConfig& cfg);

/// True iff the last `window` records all satisfy both tolerances.
bool convergence_check(const std::vector<IterationRecord>& trace, double tol_zeta,
                       double tol_eta, int window);

/// Line-delimited full-precision trace serialization (determinism fixture).
std::string trace_to_text(const EstimateReport& report);

} // namespace mbvbi

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mbvbi/coarse_stage.hpp"
#include "mbvbi/config.hpp"
#include "mbvbi/runner.hpp"

namespace mbvbi {

/// Random channel-draw recipe for one Monte-Carlo trial.  The first delay is
/// fixed; each later delay adds a uniform spacing from the matching range
/// (the last range repeats if there are more paths than ranges).  Gains have
/// fixed magnitude and uniform phases.
struct TruthSpec {
    int k_paths = 3;
    double tau1_ns = 100.0;
    std::vector<std::pair<double, double>> spacing_ns{{30.0, 40.0}, {160.0, 170.0}};
    double gain_mag = 0.5;
    double delta_std_ns = 0.1;
};

ChannelTruth draw_truth(const TruthSpec& spec, const BandPlan& plan, double snr_db,
                        std::uint64_t seed);

struct Scenario {
    BandPlan plan;
    TruthSpec truth;
    double snr_db = 15.0;
    int n_trials = 500;
    bool oracle_coarse_mode = true;
    OracleErrorSpec oracle_err;
    CoarseConfig coarse_cfg;
    IntervalPolicy interval;
    int coarse_k_max = 5;
    OrderCriterion criterion = OrderCriterion::mdl;
    RunConfig run;
    int n_threads = 1;
    std::uint64_t master_seed = 1;
};

/// The benchmark defaults: two 20 MHz bands at 2.4 and 2.6 GHz with 256
/// subcarriers of 78.125 kHz, three paths, 500 trials.
Scenario default_scenario();

/// Builds a scenario from a parsed config, starting from default_scenario().
/// Durations are given in nanoseconds in the file; see README for the key
/// list.
Scenario scenario_from_config(const Config& cfg);

struct TrialRow {
    int trial = 0;
    std::uint64_t seed = 0;
    double tau1_true_ns = 0.0;
    double tau1_map_ns = 0.0;
    double tau1_mmse_ns = 0.0;
    int selected_model = 0; ///< 1-based candidate id
    int true_model = 0;     ///< 1-based candidate id; 0 = no candidate matches
    int iters = 0;
    long long samples = 0;
    bool converged = false;
};

struct MetricsRecord {
    double axis_value = 0.0;
    int n_trials = 0;
    std::uint64_t seed = 0;
    double rmse_map_ns = 0.0;
    double rmse_mmse_ns = 0.0;
    double detect_rate = 0.0;
    double mean_samples_per_iter = 0.0;
    std::vector<TrialRow> rows;
};

/// The ground-truth candidate id for one trial: the split model whose origin
/// is the coarse path holding two true delays, or the unsplit model when the
/// coarse stage resolved every path (0 when no candidate matches).
int label_true_model(const ChannelTruth& truth, const CoarseEstimate& coarse,
                     std::span<const CandidateModel> models);

/// n_trials independent seeded trials (optionally across a worker pool) with
/// a deterministic trial-index-ordered reduce.
MetricsRecord run_montecarlo(const Scenario& sc);

std::vector<MetricsRecord> sweep_snr(const Scenario& sc, std::span<const double> snr_db_values);

/// Bandwidth stays fixed; the subcarrier spacing is adjusted to realize each
/// subcarrier count.
std::vector<MetricsRecord> sweep_datasize(const Scenario& sc, std::span<const int> n_sub_values);

/// Sorted (value, cumulative probability) points; duplicate values collapse
/// onto the highest probability.
std::vector<std::pair<double, double>> empirical_cdf(std::vector<double> values);

std::string emit_csv(std::span<const MetricsRecord> records);
std::string emit_json(std::span<const MetricsRecord> records);
std::string emit_cdf_csv(const MetricsRecord& record);
std::string emit_rows_csv(const MetricsRecord& record);

void write_file(const std::string& path, const std::string& content);

} // namespace mbvbi

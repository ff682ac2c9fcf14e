#include "mbvbi/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace mbvbi {

namespace {

constexpr std::uint64_t kTrialSalt = 0x747269616cULL;  // "trial"
constexpr std::uint64_t kTruthSalt = 0x7472757468ULL;  // "truth"
constexpr std::uint64_t kSynthSalt = 0x73796e7468ULL;  // "synth"
constexpr std::uint64_t kOracleSalt = 0x6f7263ULL;     // "orc"
constexpr std::uint64_t kRunSalt = 0x72756eULL;        // "run"
constexpr std::uint64_t kSweepSalt = 0x7377656570ULL;  // "sweep"

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

TrialRow run_trial(const Scenario& sc, int trial) {
    const std::uint64_t ts = derive_seed(sc.master_seed, {kTrialSalt,
                                                          static_cast<std::uint64_t>(trial)});
    const ChannelTruth truth =
        draw_truth(sc.truth, sc.plan, sc.snr_db, derive_seed(ts, {kTruthSalt}));
    const Observation obs = synthesize(sc.plan, truth, derive_seed(ts, {kSynthSalt}));

    CoarseEstimate coarse;
    if (sc.oracle_coarse_mode) {
        OracleErrorSpec err = sc.oracle_err;
        if (err.interval_half_width_s <= 0.0)
            err.interval_half_width_s = sc.interval.resolve(sc.plan);
        coarse = oracle_coarse(truth, sc.plan, err, derive_seed(ts, {kOracleSalt}));
    } else {
        const int k_hat = estimate_order(obs, sc.coarse_k_max, sc.criterion, sc.coarse_cfg);
        coarse = coarse_estimate(obs, k_hat, sc.interval, sc.coarse_cfg);
    }

    RunConfig rcfg = sc.run;
    rcfg.seed = derive_seed(ts, {kRunSalt});
    rcfg.record_trace = false;
    const EstimateReport report = run_mm_spvbi(obs, coarse, rcfg);

    TrialRow row;
    row.trial = trial;
    row.seed = ts;
    row.tau1_true_ns = truth.tau_s[0] * 1e9;
    double map_min = report.estimates.tau_map_s[0];
    double mmse_min = report.estimates.tau_mmse_s[0];
    for (double t : report.estimates.tau_map_s) map_min = std::min(map_min, t);
    for (double t : report.estimates.tau_mmse_s) mmse_min = std::min(mmse_min, t);
    row.tau1_map_ns = map_min * 1e9;
    row.tau1_mmse_ns = mmse_min * 1e9;
    row.selected_model = report.models[static_cast<std::size_t>(report.best_model)].id;
    row.true_model = label_true_model(truth, coarse, report.models);
    row.iters = report.iters_run;
    row.samples = report.total_samples;
    row.converged = report.converged;
    return row;
}

void aggregate(MetricsRecord& rec) {
    double se_map = 0.0, se_mmse = 0.0;
    long long samples = 0, iters = 0;
    int hits = 0;
    for (const TrialRow& row : rec.rows) {
        const double em = row.tau1_map_ns - row.tau1_true_ns;
        const double ee = row.tau1_mmse_ns - row.tau1_true_ns;
        se_map += em * em;
        se_mmse += ee * ee;
        samples += row.samples;
        iters += row.iters;
        if (row.selected_model == row.true_model && row.true_model != 0) ++hits;
    }
    const double n = static_cast<double>(rec.rows.size());
    rec.rmse_map_ns = std::sqrt(se_map / n);
    rec.rmse_mmse_ns = std::sqrt(se_mmse / n);
    rec.detect_rate = hits / n;
    rec.mean_samples_per_iter =
        iters > 0 ? static_cast<double>(samples) / static_cast<double>(iters) : 0.0;
    rec.n_trials = static_cast<int>(rec.rows.size());
}

} // namespace

ChannelTruth draw_truth(const TruthSpec& spec, const BandPlan& plan, double snr_db,
                        std::uint64_t seed) {
    if (spec.k_paths < 1) throw std::invalid_argument("truth spec: k_paths must be >= 1");
    if (spec.spacing_ns.empty() && spec.k_paths > 1)
        throw std::invalid_argument("truth spec: spacing ranges required for multiple paths");
    Rng rng(seed);

    ChannelTruth truth;
    truth.k_paths = spec.k_paths;
    truth.tau_s.resize(static_cast<std::size_t>(spec.k_paths));
    truth.tau_s[0] = spec.tau1_ns * 1e-9;
    for (int k = 1; k < spec.k_paths; ++k) {
        const auto& range =
            spec.spacing_ns[std::min(static_cast<std::size_t>(k - 1), spec.spacing_ns.size() - 1)];
        truth.tau_s[static_cast<std::size_t>(k)] =
            truth.tau_s[static_cast<std::size_t>(k - 1)] +
            rng.uniform(range.first, range.second) * 1e-9;
    }

    truth.alpha.resize(static_cast<std::size_t>(spec.k_paths));
    double power = 0.0;
    for (int k = 0; k < spec.k_paths; ++k) {
        truth.alpha[static_cast<std::size_t>(k)] =
            std::polar(spec.gain_mag, rng.uniform(0.0, 2.0 * std::numbers::pi));
        power += spec.gain_mag * spec.gain_mag;
    }

    const int m_bands = plan.n_bands();
    truth.phi_rad.resize(static_cast<std::size_t>(m_bands));
    for (int m = 0; m < m_bands; ++m)
        truth.phi_rad[static_cast<std::size_t>(m)] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    truth.delta_s.resize(static_cast<std::size_t>(m_bands));
    for (int m = 0; m < m_bands; ++m)
        truth.delta_s[static_cast<std::size_t>(m)] = rng.normal(0.0, spec.delta_std_ns * 1e-9);

    truth.noise_var = power / std::pow(10.0, snr_db / 10.0);
    truth.validate(plan);
    return truth;
}

Scenario default_scenario() {
    Scenario sc;
    sc.plan.bands = {{2.4e9, 78.125e3, 256}, {2.6e9, 78.125e3, 256}};
    return sc;
}

Scenario scenario_from_config(const Config& cfg) {
    Scenario sc = default_scenario();

    const int n_bands = cfg.get_int("band.count", static_cast<int>(sc.plan.bands.size()));
    if (n_bands < 1) throw std::invalid_argument("config: band.count must be >= 1");
    std::vector<Band> bands;
    for (int m = 1; m <= n_bands; ++m) {
        const std::string p = "band." + std::to_string(m) + ".";
        const Band fallback = static_cast<std::size_t>(m - 1) < sc.plan.bands.size()
                                  ? sc.plan.bands[static_cast<std::size_t>(m - 1)]
                                  : Band{2.4e9, 78.125e3, 256};
        bands.push_back({cfg.get_double(p + "fc_hz", fallback.fc_hz),
                         cfg.get_double(p + "fs_hz", fallback.fs_hz),
                         cfg.get_int(p + "n_sub", fallback.n_sub)});
    }
    sc.plan.bands = bands;
    sc.plan.validate();

    sc.truth.k_paths = cfg.get_int("truth.k_paths", sc.truth.k_paths);
    sc.truth.tau1_ns = cfg.get_double("truth.tau1_ns", sc.truth.tau1_ns);
    if (cfg.has("truth.spacing_ns")) {
        const auto flat = cfg.get_list("truth.spacing_ns", {});
        if (flat.size() % 2 != 0)
            throw std::invalid_argument("config: truth.spacing_ns needs lo,hi pairs");
        sc.truth.spacing_ns.clear();
        for (std::size_t i = 0; i + 1 < flat.size(); i += 2)
            sc.truth.spacing_ns.emplace_back(flat[i], flat[i + 1]);
    }
    sc.truth.gain_mag = cfg.get_double("truth.gain_mag", sc.truth.gain_mag);
    sc.truth.delta_std_ns = cfg.get_double("truth.delta_std_ns", sc.truth.delta_std_ns);

    sc.snr_db = cfg.get_double("scenario.snr_db", sc.snr_db);
    sc.n_trials = cfg.get_int("scenario.trials", sc.n_trials);
    sc.n_threads = cfg.get_int("scenario.threads", sc.n_threads);
    sc.master_seed = cfg.get_u64("scenario.seed", sc.master_seed);

    const std::string mode = cfg.get_string("coarse.mode", "oracle");
    if (mode == "oracle") {
        sc.oracle_coarse_mode = true;
    } else if (mode == "estimated") {
        sc.oracle_coarse_mode = false;
    } else {
        throw std::invalid_argument("config: coarse.mode must be oracle or estimated");
    }
    sc.oracle_err.tau_sigma_s = cfg.get_double("coarse.tau_sigma_ns", 0.0) * 1e-9;
    sc.oracle_err.phi_sigma = cfg.get_double("coarse.phi_sigma", 0.0);
    sc.oracle_err.delta_sigma_s = cfg.get_double("coarse.delta_sigma_ns", 0.0) * 1e-9;
    sc.oracle_err.alpha_sigma = cfg.get_double("coarse.alpha_sigma", 0.0);
    if (cfg.has("coarse.merge")) {
        const auto pair = cfg.get_list("coarse.merge", {});
        if (pair.size() != 2)
            throw std::invalid_argument("config: coarse.merge needs two path indices");
        sc.oracle_err.merge = {static_cast<int>(pair[0]), static_cast<int>(pair[1])};
    }
    sc.oracle_err.interval_half_width_s = cfg.get_double("coarse.half_width_ns", 0.0) * 1e-9;
    sc.interval.half_width_s = sc.oracle_err.interval_half_width_s;
    sc.coarse_k_max = cfg.get_int("coarse.k_max", sc.coarse_k_max);
    const std::string crit = cfg.get_string("coarse.criterion", "mdl");
    if (crit == "aic") {
        sc.criterion = OrderCriterion::aic;
    } else if (crit == "mdl") {
        sc.criterion = OrderCriterion::mdl;
    } else if (crit == "bic") {
        sc.criterion = OrderCriterion::bic;
    } else {
        throw std::invalid_argument("config: coarse.criterion must be aic, mdl or bic");
    }
    sc.coarse_cfg.grid_start_s = cfg.get_double("coarse.grid_start_ns", 0.0) * 1e-9;
    sc.coarse_cfg.grid_stop_s =
        cfg.get_double("coarse.grid_stop_ns", sc.coarse_cfg.grid_stop_s * 1e9) * 1e-9;
    sc.coarse_cfg.grid_step_s =
        cfg.get_double("coarse.grid_step_ns", sc.coarse_cfg.grid_step_s * 1e9) * 1e-9;
    sc.coarse_cfg.min_peak_sep_s = cfg.get_double("coarse.min_peak_sep_ns", 0.0) * 1e-9;

    sc.run.b_min = cfg.get_int("run.b", sc.run.b_min);
    sc.run.kappa1 = cfg.get_double("run.kappa1", sc.run.kappa1);
    sc.run.kappa2 = cfg.get_double("run.kappa2", sc.run.kappa2);
    sc.run.max_iters = cfg.get_int("run.max_iters", sc.run.max_iters);
    sc.run.tol_zeta = cfg.get_double("run.tol_zeta", sc.run.tol_zeta);
    sc.run.tol_eta = cfg.get_double("run.tol_eta", sc.run.tol_eta);
    sc.run.window = cfg.get_int("run.window", sc.run.window);
    sc.run.split_count = cfg.get_int("run.split_count", sc.run.split_count);
    sc.run.tau_d_s = cfg.get_double("run.tau_d_ns", 0.0) * 1e-9;
    sc.run.eps_zeta = cfg.get_double("run.eps_zeta", sc.run.eps_zeta);
    sc.run.posterior.n_particles = cfg.get_int("run.n_particles", sc.run.posterior.n_particles);
    sc.run.posterior.phi_init_var =
        cfg.get_double("run.phi_init_var", sc.run.posterior.phi_init_var);
    sc.run.posterior.delta_init_var =
        cfg.get_double("run.delta_init_var_ns2", 0.0) * 1e-18;
    sc.run.prior.sigma0_default_s = cfg.get_double("run.sigma0_ns", 0.1) * 1e-9;
    sc.run.record_trace = cfg.get_bool("run.record_trace", sc.run.record_trace);

    sc.run.schedule.rho.a = cfg.get_double("schedule.rho_a", sc.run.schedule.rho.a);
    sc.run.schedule.rho.b = cfg.get_double("schedule.rho_b", sc.run.schedule.rho.b);
    sc.run.schedule.rho.kappa = cfg.get_double("schedule.rho_kappa", sc.run.schedule.rho.kappa);
    sc.run.schedule.gamma.a = cfg.get_double("schedule.gamma_a", sc.run.schedule.gamma.a);
    sc.run.schedule.gamma.b = cfg.get_double("schedule.gamma_b", sc.run.schedule.gamma.b);
    sc.run.schedule.gamma.kappa =
        cfg.get_double("schedule.gamma_kappa", sc.run.schedule.gamma.kappa);

    sc.run.gamma_policy.range_frac =
        cfg.get_double("policy.range_frac", sc.run.gamma_policy.range_frac);
    sc.run.gamma_policy.range_quad =
        cfg.get_double("policy.range_quad", sc.run.gamma_policy.range_quad);
    sc.run.gamma_policy.kappa_fisher =
        cfg.get_double("policy.kappa_fisher", sc.run.gamma_policy.kappa_fisher);

    sc.run.validate();
    return sc;
}

int label_true_model(const ChannelTruth& truth, const CoarseEstimate& coarse,
                     std::span<const CandidateModel> models) {
    std::vector<int> counts(static_cast<std::size_t>(coarse.k_hat), 0);
    for (double tau : truth.tau_s) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < coarse.tau_hat_s.size(); ++j)
            if (std::abs(tau - coarse.tau_hat_s[j]) < std::abs(tau - coarse.tau_hat_s[best]))
                best = j;
        ++counts[best];
    }

    int crowded = -1;
    for (std::size_t j = 0; j < counts.size(); ++j) {
        if (counts[j] >= 2) {
            if (crowded >= 0) return 0; // two unresolved pairs: no candidate matches
            crowded = static_cast<int>(j);
        }
    }
    if (crowded < 0) {
        for (const CandidateModel& m : models)
            if (!m.split_origin) return m.id;
        return 0;
    }
    for (const CandidateModel& m : models)
        if (m.split_origin && *m.split_origin == crowded) return m.id;
    return 0;
}

MetricsRecord run_montecarlo(const Scenario& sc) {
    if (sc.n_trials < 1) throw std::invalid_argument("scenario: trials must be >= 1");
    sc.run.validate();
    sc.plan.validate();

    MetricsRecord rec;
    rec.axis_value = sc.snr_db;
    rec.seed = sc.master_seed;
    rec.rows.resize(static_cast<std::size_t>(sc.n_trials));

    const int workers = std::max(1, std::min(sc.n_threads, sc.n_trials));
    if (workers == 1) {
        for (int i = 0; i < sc.n_trials; ++i)
            rec.rows[static_cast<std::size_t>(i)] = run_trial(sc, i);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (int i = next.fetch_add(1); i < sc.n_trials; i = next.fetch_add(1))
                    rec.rows[static_cast<std::size_t>(i)] = run_trial(sc, i);
            });
        }
        for (std::thread& th : pool) th.join();
    }

    aggregate(rec);
    return rec;
}

std::vector<MetricsRecord> sweep_snr(const Scenario& sc, std::span<const double> snr_db_values) {
    if (snr_db_values.empty()) throw std::invalid_argument("sweep: no axis values");
    std::vector<MetricsRecord> out;
    out.reserve(snr_db_values.size());
    for (std::size_t i = 0; i < snr_db_values.size(); ++i) {
        Scenario step = sc;
        step.snr_db = snr_db_values[i];
        step.master_seed = derive_seed(sc.master_seed, {kSweepSalt, i});
        MetricsRecord rec = run_montecarlo(step);
        rec.axis_value = snr_db_values[i];
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<MetricsRecord> sweep_datasize(const Scenario& sc, std::span<const int> n_sub_values) {
    if (n_sub_values.empty()) throw std::invalid_argument("sweep: no axis values");
    std::vector<MetricsRecord> out;
    out.reserve(n_sub_values.size());
    for (std::size_t i = 0; i < n_sub_values.size(); ++i) {
        const int n_sub = n_sub_values[i];
        if (n_sub < 2) throw std::invalid_argument("sweep: n_sub must be >= 2");
        Scenario step = sc;
        for (Band& band : step.plan.bands) {
            const double bandwidth = band.fs_hz * band.n_sub;
            band.n_sub = n_sub;
            band.fs_hz = bandwidth / n_sub;
        }
        step.master_seed = derive_seed(sc.master_seed, {kSweepSalt, i});
        MetricsRecord rec = run_montecarlo(step);
        rec.axis_value = n_sub;
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<std::pair<double, double>> empirical_cdf(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("cdf: no values");
    std::sort(values.begin(), values.end());
    std::vector<std::pair<double, double>> out;
    const double n = static_cast<double>(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double p = static_cast<double>(i + 1) / n;
        if (!out.empty() && out.back().first == values[i]) {
            out.back().second = p;
        } else {
            out.emplace_back(values[i], p);
        }
    }
    return out;
}

std::string emit_csv(std::span<const MetricsRecord> records) {
    if (records.empty()) throw std::invalid_argument("emit: no records");
    std::string out =
        "axis_value,rmse_map_ns,rmse_mmse_ns,detect_rate,mean_samples_per_iter,n_trials,seed\n";
    for (const MetricsRecord& r : records) {
        out += fmt(r.axis_value) + ',' + fmt(r.rmse_map_ns) + ',' + fmt(r.rmse_mmse_ns) + ',' +
               fmt(r.detect_rate) + ',' + fmt(r.mean_samples_per_iter) + ',' +
               std::to_string(r.n_trials) + ',' + std::to_string(r.seed) + '\n';
    }
    return out;
}

std::string emit_json(std::span<const MetricsRecord> records) {
    if (records.empty()) throw std::invalid_argument("emit: no records");
    nlohmann::json root;
    root["records"] = nlohmann::json::array();
    for (const MetricsRecord& r : records) {
        root["records"].push_back({{"axis_value", r.axis_value},
                                   {"rmse_map_ns", r.rmse_map_ns},
                                   {"rmse_mmse_ns", r.rmse_mmse_ns},
                                   {"detect_rate", r.detect_rate},
                                   {"mean_samples_per_iter", r.mean_samples_per_iter},
                                   {"n_trials", r.n_trials},
                                   {"seed", r.seed}});
    }
    return root.dump(2) + "\n";
}

std::string emit_cdf_csv(const MetricsRecord& record) {
    std::vector<double> errors;
    errors.reserve(record.rows.size());
    for (const TrialRow& row : record.rows)
        errors.push_back(std::abs(row.tau1_map_ns - row.tau1_true_ns));
    std::string out = "error_ns,cum_prob\n";
    for (const auto& [v, p] : empirical_cdf(std::move(errors)))
        out += fmt(v) + ',' + fmt(p) + '\n';
    return out;
}

std::string emit_rows_csv(const MetricsRecord& record) {
    std::string out = "trial,seed,tau1_true_ns,tau1_map_ns,tau1_mmse_ns,selected_model,"
                      "true_model,iters,samples,converged\n";
    for (const TrialRow& r : record.rows) {
        out += std::to_string(r.trial) + ',' + std::to_string(r.seed) + ',' +
               fmt(r.tau1_true_ns) + ',' + fmt(r.tau1_map_ns) + ',' + fmt(r.tau1_mmse_ns) + ',' +
               std::to_string(r.selected_model) + ',' + std::to_string(r.true_model) + ',' +
               std::to_string(r.iters) + ',' + std::to_string(r.samples) + ',' +
               (r.converged ? "1" : "0") + '\n';
    }
    return out;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << content;
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

} // namespace mbvbi

#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mbvbi/harness.hpp"

namespace {

using namespace mbvbi;

struct CommonOpts {
    std::string config_path;
    std::string out_dir = ".";
    std::string format = "csv";
    std::uint64_t seed = 0;
    bool seed_set = false;
    int trials = 0;
};

Scenario load_scenario(const CommonOpts& opts) {
    Scenario sc = opts.config_path.empty()
                      ? default_scenario()
                      : scenario_from_config(Config::parse_file(opts.config_path));
    if (opts.seed_set) sc.master_seed = opts.seed;
    if (opts.trials > 0) sc.n_trials = opts.trials;
    if (opts.format != "csv" && opts.format != "json")
        throw std::invalid_argument("--format must be csv or json");
    std::filesystem::create_directories(opts.out_dir);
    return sc;
}

std::string out_path(const CommonOpts& opts, const std::string& name) {
    return (std::filesystem::path(opts.out_dir) / name).string();
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "scenario config file");
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--format", opts.format, "csv or json");
    cmd->add_option("--trials", opts.trials, "override trial count");
    cmd->add_option("--seed", opts.seed, "override master seed")
        ->each([&opts](const std::string&) { opts.seed_set = true; });
}

void emit_metrics(const CommonOpts& opts, const std::string& stem,
                  const std::vector<MetricsRecord>& records) {
    if (opts.format == "json") {
        write_file(out_path(opts, stem + ".json"), emit_json(records));
    } else {
        write_file(out_path(opts, stem + ".csv"), emit_csv(records));
    }
}

int cmd_synth(const CommonOpts& opts) {
    const Scenario sc = load_scenario(opts);
    const std::uint64_t ts = derive_seed(sc.master_seed, {0x747269616cULL, 0});
    const ChannelTruth truth =
        draw_truth(sc.truth, sc.plan, sc.snr_db, derive_seed(ts, {0x7472757468ULL}));
    const Observation obs = synthesize(sc.plan, truth, derive_seed(ts, {0x73796e7468ULL}));
    const FreqTables tables = make_freq_tables(sc.plan);

    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "# noise_var=%.17g\n", obs.noise_var);
    out += buf;
    for (int k = 0; k < truth.k_paths; ++k) {
        std::snprintf(buf, sizeof buf, "# tau_ns[%d]=%.17g\n", k,
                      truth.tau_s[static_cast<std::size_t>(k)] * 1e9);
        out += buf;
    }
    out += "index,band,f_offset_hz,re,im\n";
    for (std::size_t i = 0; i < obs.y.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%d,%.17g,%.17g,%.17g\n", i, tables.band[i] + 1,
                      tables.f_offset[i], obs.y[i].real(), obs.y[i].imag());
        out += buf;
    }
    write_file(out_path(opts, "observation.csv"), out);
    std::printf("wrote %s (%d samples)\n", out_path(opts, "observation.csv").c_str(),
                sc.plan.n_all());
    return 0;
}

int cmd_run(const CommonOpts& opts) {
    Scenario sc = load_scenario(opts);
    const std::uint64_t ts = derive_seed(sc.master_seed, {0x747269616cULL, 0});
    const ChannelTruth truth =
        draw_truth(sc.truth, sc.plan, sc.snr_db, derive_seed(ts, {0x7472757468ULL}));
    const Observation obs = synthesize(sc.plan, truth, derive_seed(ts, {0x73796e7468ULL}));

    CoarseEstimate coarse;
    if (sc.oracle_coarse_mode) {
        OracleErrorSpec err = sc.oracle_err;
        if (err.interval_half_width_s <= 0.0)
            err.interval_half_width_s = sc.interval.resolve(sc.plan);
        coarse = oracle_coarse(truth, sc.plan, err, derive_seed(ts, {0x6f7263ULL}));
    } else {
        coarse = coarse_estimate(obs,
                                 estimate_order(obs, sc.coarse_k_max, sc.criterion, sc.coarse_cfg),
                                 sc.interval, sc.coarse_cfg);
    }

    RunConfig rcfg = sc.run;
    rcfg.seed = derive_seed(ts, {0x72756eULL});
    rcfg.record_trace = true;
    const EstimateReport report = run_mm_spvbi(obs, coarse, rcfg);

    write_file(out_path(opts, "trace.txt"), trace_to_text(report));
    write_file(out_path(opts, "posterior.txt"),
               to_snapshot_text(report.posteriors[static_cast<std::size_t>(report.best_model)]));

    nlohmann::json j;
    j["best_model"] = report.models[static_cast<std::size_t>(report.best_model)].id;
    j["true_model"] = label_true_model(truth, coarse, report.models);
    j["converged"] = report.converged;
    j["iters_run"] = report.iters_run;
    j["total_samples"] = report.total_samples;
    j["zeta_final"] = report.zeta_final;
    j["coarse_k_hat"] = coarse.k_hat;
    auto ns_vec = [](const std::vector<double>& v) {
        std::vector<double> out;
        out.reserve(v.size());
        for (double x : v) out.push_back(x * 1e9);
        return out;
    };
    j["tau_true_ns"] = ns_vec(truth.tau_s);
    j["tau_map_ns"] = ns_vec(report.estimates.tau_map_s);
    j["tau_mmse_ns"] = ns_vec(report.estimates.tau_mmse_s);
    j["phi_hat"] = report.estimates.phi_hat;
    j["delta_hat_ns"] = ns_vec(report.estimates.delta_hat_s);
    for (const cplx& a : report.estimates.alpha_hat) {
        j["alpha_hat_re"].push_back(a.real());
        j["alpha_hat_im"].push_back(a.imag());
    }
    write_file(out_path(opts, "report.json"), j.dump(2) + "\n");
    std::printf("best model %d after %d iterations (converged=%d)\n",
                report.models[static_cast<std::size_t>(report.best_model)].id, report.iters_run,
                report.converged ? 1 : 0);
    return 0;
}

int cmd_sweep_snr(const CommonOpts& opts) {
    const Scenario sc = load_scenario(opts);
    std::vector<double> values{-5.0, 0.0, 5.0};
    if (!opts.config_path.empty())
        values = Config::parse_file(opts.config_path).get_list("sweep.snr_db", values);
    const auto records = sweep_snr(sc, values);
    emit_metrics(opts, "sweep_snr", records);
    for (const MetricsRecord& rec : records) {
        char name[64];
        std::snprintf(name, sizeof name, "rows_snr_%g.csv", rec.axis_value);
        write_file(out_path(opts, name), emit_rows_csv(rec));
    }
    return 0;
}

int cmd_sweep_datasize(const CommonOpts& opts) {
    const Scenario sc = load_scenario(opts);
    std::vector<double> raw{64, 128, 256};
    if (!opts.config_path.empty())
        raw = Config::parse_file(opts.config_path).get_list("sweep.n_sub", raw);
    std::vector<int> values;
    values.reserve(raw.size());
    for (double v : raw) values.push_back(static_cast<int>(v));
    const auto records = sweep_datasize(sc, values);
    emit_metrics(opts, "sweep_datasize", records);
    for (const MetricsRecord& rec : records) {
        char name[64];
        std::snprintf(name, sizeof name, "rows_datasize_%g.csv", rec.axis_value);
        write_file(out_path(opts, name), emit_rows_csv(rec));
    }
    return 0;
}

int cmd_cdf(const CommonOpts& opts) {
    const Scenario sc = load_scenario(opts);
    const MetricsRecord rec = run_montecarlo(sc);
    emit_metrics(opts, "metrics", {rec});
    write_file(out_path(opts, "cdf.csv"), emit_cdf_csv(rec));
    write_file(out_path(opts, "rows.csv"), emit_rows_csv(rec));
    std::printf("detect_rate=%.4f rmse_map=%.4f ns over %d trials\n", rec.detect_rate,
                rec.rmse_map_ns, rec.n_trials);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"multiband delay estimation benchmark"};
    app.require_subcommand(1);

    CommonOpts synth_opts, run_opts, snr_opts, size_opts, cdf_opts;
    add_common(app.add_subcommand("synth", "emit one observation fixture"), synth_opts);
    add_common(app.add_subcommand("run", "single trial with full trace"), run_opts);
    add_common(app.add_subcommand("sweep-snr", "Monte-Carlo sweep over SNR"), snr_opts);
    add_common(app.add_subcommand("sweep-datasize", "Monte-Carlo sweep over subcarrier count"),
               size_opts);
    add_common(app.add_subcommand("cdf", "Monte-Carlo run with error CDF"), cdf_opts);

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("synth")) return cmd_synth(synth_opts);
        if (app.got_subcommand("run")) return cmd_run(run_opts);
        if (app.got_subcommand("sweep-snr")) return cmd_sweep_snr(snr_opts);
        if (app.got_subcommand("sweep-datasize")) return cmd_sweep_datasize(size_opts);
        if (app.got_subcommand("cdf")) return cmd_cdf(cdf_opts);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

#include "mbvbi/coarse_stage.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "mbvbi/lls.hpp"
#include "mbvbi/rng.hpp"

namespace mbvbi {

namespace {
constexpr double two_pi = 2.0 * std::numbers::pi;
}

double IntervalPolicy::resolve(const BandPlan& plan) const {
    if (half_width_s > 0.0) return half_width_s;
    return 0.5 / plan.max_bandwidth_hz();
}

std::vector<double> make_delay_grid(const CoarseConfig& cfg) {
    if (cfg.grid_step_s <= 0.0 || cfg.grid_stop_s <= cfg.grid_start_s)
        throw std::invalid_argument("make_delay_grid: malformed grid spec");
    std::vector<double> grid;
    const int n = static_cast<int>(
        std::floor((cfg.grid_stop_s - cfg.grid_start_s) / cfg.grid_step_s + 1e-9)) + 1;
    grid.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) grid.push_back(cfg.grid_start_s + i * cfg.grid_step_s);
    return grid;
}

std::vector<double> delay_profile(const Observation& obs, std::span<const double> grid) {
    if (grid.empty()) throw std::invalid_argument("delay_profile: empty grid");
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (grid[i] <= grid[i - 1])
            throw std::invalid_argument("delay_profile: grid must be strictly increasing");
    obs.plan.validate();

    std::vector<double> profile(grid.size(), 0.0);
    std::size_t row0 = 0;
    for (const Band& b : obs.plan.bands) {
        // Hann taper: without it the rectangular correlation kernel's
        // sidelobes drag multipath peaks several grid steps off their true
        // delays.
        std::vector<double> win(static_cast<std::size_t>(b.n_sub), 1.0);
        if (b.n_sub >= 4) {
            for (int n = 0; n < b.n_sub; ++n)
                win[static_cast<std::size_t>(n)] =
                    0.5 - 0.5 * std::cos(two_pi * n / (b.n_sub - 1));
        }
        double wsum = 0.0;
        for (double w : win) wsum += w;
        const double inv_w2 = 1.0 / (wsum * wsum);
        for (std::size_t g = 0; g < grid.size(); ++g) {
            // Correlate against e^{-j 2pi n fs tau}; the per-band carrier
            // phase drops out of the magnitude.
            cplx acc{0.0, 0.0};
            const double w = two_pi * b.fs_hz * grid[g];
            for (int n = 0; n < b.n_sub; ++n)
                acc += win[static_cast<std::size_t>(n)] *
                       obs.y[row0 + static_cast<std::size_t>(n)] * std::polar(1.0, w * n);
            profile[g] += std::norm(acc) * inv_w2;
        }
        row0 += static_cast<std::size_t>(b.n_sub);
    }
    return profile;
}

namespace {

std::vector<std::size_t> local_maxima(std::span<const double> p) {
    std::vector<std::size_t> idx;
    const std::size_t n = p.size();
    for (std::size_t i = 0; i < n; ++i) {
        const bool left_ok = (i == 0) || p[i] >= p[i - 1];
        const bool right_ok = (i + 1 == n) || p[i] > p[i + 1];
        if (left_ok && right_ok && p[i] > 0.0) idx.push_back(i);
    }
    return idx;
}

void sort_by_height(std::vector<std::size_t>& idx, std::span<const double> p) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (p[a] != p[b]) return p[a] > p[b];
        return a < b;
    });
}

} // namespace

std::vector<double> ranked_peak_delays(std::span<const double> profile,
                                       std::span<const double> grid,
                                       int count, double min_sep_s, bool* relaxed) {
    if (profile.size() != grid.size())
        throw std::invalid_argument("ranked_peak_delays: profile/grid size mismatch");
    if (count < 1) throw std::invalid_argument("ranked_peak_delays: count must be >= 1");
    if (relaxed) *relaxed = false;

    std::vector<std::size_t> maxima = local_maxima(profile);
    sort_by_height(maxima, profile);

    std::vector<std::size_t> chosen;
    auto far_enough = [&](std::size_t cand, double sep) {
        for (std::size_t c : chosen)
            if (std::abs(grid[cand] - grid[c]) < sep) return false;
        return true;
    };
    for (std::size_t cand : maxima) {
        if (static_cast<int>(chosen.size()) >= count) break;
        if (far_enough(cand, min_sep_s)) chosen.push_back(cand);
    }
    if (static_cast<int>(chosen.size()) < count) {
        // Not enough separable peaks: relax to any remaining local maxima,
        // then to raw grid points, keeping at least one grid step apart.
        if (relaxed) *relaxed = true;
        const double step = grid.size() > 1 ? grid[1] - grid[0] : min_sep_s;
        for (std::size_t cand : maxima) {
            if (static_cast<int>(chosen.size()) >= count) break;
            if (far_enough(cand, step)) chosen.push_back(cand);
        }
        if (static_cast<int>(chosen.size()) < count) {
            std::vector<std::size_t> all(grid.size());
            for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
            sort_by_height(all, profile);
            for (std::size_t cand : all) {
                if (static_cast<int>(chosen.size()) >= count) break;
                if (far_enough(cand, step)) chosen.push_back(cand);
            }
        }
    }
    std::vector<double> out;
    out.reserve(chosen.size());
    for (std::size_t c : chosen) out.push_back(grid[c]);
    return out;
}

namespace {

/// Residual sum of squares of the order-K coarse fit: per-band complex gains
/// against delay-only columns (carrier phase and timing offset fold into the
/// per-band gain at this stage).
double coarse_fit_rss(const Observation& obs, std::span<const double> tau) {
    double rss = 0.0;
    std::size_t row0 = 0;
    const int k = static_cast<int>(tau.size());
    for (const Band& b : obs.plan.bands) {
        CMatrix d;
        d.rows = b.n_sub;
        d.cols = k;
        d.a.resize(static_cast<std::size_t>(b.n_sub) * k);
        for (int c = 0; c < k; ++c)
            for (int n = 0; n < b.n_sub; ++n)
                d.at(n, c) = std::polar(1.0, -two_pi * b.fs_hz * n * tau[static_cast<std::size_t>(c)]);
        const std::span<const cplx> yb{obs.y.data() + row0, static_cast<std::size_t>(b.n_sub)};
        const LsResult ls = solve_ls_gains(d, yb, true);
        for (int n = 0; n < b.n_sub; ++n) {
            cplx fit{0.0, 0.0};
            for (int c = 0; c < k; ++c) fit += d.at(n, c) * ls.gains[static_cast<std::size_t>(c)];
            rss += std::norm(yb[static_cast<std::size_t>(n)] - fit);
        }
        row0 += static_cast<std::size_t>(b.n_sub);
    }
    return rss;
}

} // namespace

double order_criterion_score(const Observation& obs, int k, double eta, const CoarseConfig& cfg) {
    if (k < 1) throw std::invalid_argument("order_criterion_score: k must be >= 1");
    const std::vector<double> grid = make_delay_grid(cfg);
    const std::vector<double> profile = delay_profile(obs, grid);
    const double sep = cfg.min_peak_sep_s > 0.0 ? cfg.min_peak_sep_s
                                                : 1.0 / obs.plan.max_bandwidth_hz();
    std::vector<double> tau = ranked_peak_delays(profile, grid, k, sep);
    std::sort(tau.begin(), tau.end());
    const double rss = coarse_fit_rss(obs, tau);
    const double n = static_cast<double>(obs.plan.n_all());
    const double ll = -n * std::log(std::numbers::pi * obs.noise_var) - rss / obs.noise_var;
    return -2.0 * ll + eta * k;
}

int estimate_order(const Observation& obs, int k_max, OrderCriterion criterion,
                   const CoarseConfig& cfg, double eta_override) {
    if (k_max < 1) throw std::invalid_argument("estimate_order: k_max must be >= 1");
    double eta = eta_override;
    if (eta <= 0.0) {
        eta = (criterion == OrderCriterion::aic)
                  ? 2.0
                  : std::log(static_cast<double>(obs.plan.n_all()));
    }
    int best_k = 1;
    double best = order_criterion_score(obs, 1, eta, cfg);
    for (int k = 2; k <= k_max; ++k) {
        const double score = order_criterion_score(obs, k, eta, cfg);
        if (score < best) {
            best = score;
            best_k = k;
        }
    }
    return best_k;
}

CoarseEstimate coarse_estimate(const Observation& obs, int k_hat,
                               const IntervalPolicy& policy, const CoarseConfig& cfg) {
    if (k_hat < 1) throw std::invalid_argument("coarse_estimate: k_hat must be >= 1");
    const std::vector<double> grid = make_delay_grid(cfg);
    const std::vector<double> profile = delay_profile(obs, grid);
    const double sep = cfg.min_peak_sep_s > 0.0 ? cfg.min_peak_sep_s
                                                : 1.0 / obs.plan.max_bandwidth_hz();
    bool relaxed = false;
    std::vector<double> tau = ranked_peak_delays(profile, grid, k_hat, sep, &relaxed);
    std::sort(tau.begin(), tau.end());

    CoarseEstimate est;
    est.k_hat = static_cast<int>(tau.size());
    est.tau_hat_s = std::move(tau);
    est.merged_fallback = relaxed;
    const double base_hw = policy.resolve(obs.plan);
    // Peaks placed under a relaxed separation carry extra uncertainty.
    const double hw = relaxed ? 2.0 * base_hw : base_hw;
    est.interval_half_width_s.assign(est.tau_hat_s.size(), hw);
    est.phi_rel_hat.assign(static_cast<std::size_t>(obs.plan.n_bands()) - 1, 0.0);
    est.delta_hat_s.assign(static_cast<std::size_t>(obs.plan.n_bands()), 0.0);

    const CMatrix d = steering_matrix(obs.plan, est.tau_hat_s, est.phi_rel_hat, est.delta_hat_s);
    est.alpha_hat = solve_ls_gains(d, obs.y, true).gains;
    return est;
}

CoarseEstimate oracle_coarse(const ChannelTruth& truth, const BandPlan& plan,
                             const OracleErrorSpec& spec, std::uint64_t seed) {
    truth.validate(plan);
    const RefinedParams ref = absorb_reference(truth, plan);
    Rng rng(derive_seed(seed, {0x6f7261636cULL}));

    std::vector<double> tau = ref.tau_s;
    std::vector<cplx> alpha = ref.alpha;
    if (spec.merge) {
        const auto [i, j] = *spec.merge;
        if (i < 0 || j <= i || j >= static_cast<int>(tau.size()))
            throw std::invalid_argument("oracle_coarse: malformed merge directive");
        const auto iu = static_cast<std::size_t>(i);
        const auto ju = static_cast<std::size_t>(j);
        const double wi = std::abs(alpha[iu]);
        const double wj = std::abs(alpha[ju]);
        const double wsum = wi + wj;
        if (wsum <= 0.0) throw std::invalid_argument("oracle_coarse: merge of zero-gain paths");
        tau[iu] = (wi * tau[iu] + wj * tau[ju]) / wsum;
        alpha[iu] += alpha[ju];
        tau.erase(tau.begin() + static_cast<std::ptrdiff_t>(ju));
        alpha.erase(alpha.begin() + static_cast<std::ptrdiff_t>(ju));
    }

    for (double& t : tau) t += spec.tau_sigma_s > 0.0 ? rng.normal(0.0, spec.tau_sigma_s) : 0.0;
    for (cplx& a : alpha)
        if (spec.alpha_sigma > 0.0) a += rng.cnormal(spec.alpha_sigma * spec.alpha_sigma);

    // Keep (tau, alpha) pairs aligned while restoring sorted order.
    std::vector<std::size_t> order(tau.size());
    for (std::size_t idx = 0; idx < order.size(); ++idx) order[idx] = idx;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return tau[a] < tau[b]; });

    CoarseEstimate est;
    est.k_hat = static_cast<int>(tau.size());
    for (std::size_t idx : order) {
        est.tau_hat_s.push_back(tau[idx]);
        est.alpha_hat.push_back(alpha[idx]);
    }
    const double hw = spec.interval_half_width_s > 0.0 ? spec.interval_half_width_s
                                                       : IntervalPolicy{}.resolve(plan);
    est.interval_half_width_s.assign(est.tau_hat_s.size(), hw);
    for (double p : ref.phi_rel)
        est.phi_rel_hat.push_back(spec.phi_sigma > 0.0 ? wrap_2pi(p + rng.normal(0.0, spec.phi_sigma)) : p);
    for (double dlt : ref.delta_s)
        est.delta_hat_s.push_back(dlt + (spec.delta_sigma_s > 0.0 ? rng.normal(0.0, spec.delta_sigma_s) : 0.0));
    return est;
}

} // namespace mbvbi

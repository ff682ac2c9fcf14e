#include "mbvbi/model_space.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "mbvbi/densities.hpp"

namespace mbvbi {

std::vector<CandidateModel> build_candidates(const CoarseEstimate& coarse,
                                             int split_count, double tau_d_s) {
    if (tau_d_s <= 0.0) throw std::invalid_argument("build_candidates: tau_d must be positive");
    if (split_count < 0) throw std::invalid_argument("build_candidates: split_count must be >= 0");
    if (coarse.k_hat < 1 || coarse.tau_hat_s.empty())
        throw std::invalid_argument("build_candidates: empty coarse estimate");
    if (split_count > coarse.k_hat)
        throw std::invalid_argument("build_candidates: split_count exceeds coarse path count");
    const auto k = static_cast<std::size_t>(coarse.k_hat);
    if (coarse.interval_half_width_s.size() != k || coarse.alpha_hat.size() != k)
        throw std::invalid_argument("build_candidates: coarse field size mismatch");

    std::vector<CandidateModel> models;
    CandidateModel base;
    base.id = 1;
    base.k = coarse.k_hat;
    base.tau_seeds_s = coarse.tau_hat_s;
    base.interval_half_width_s = coarse.interval_half_width_s;
    models.push_back(base);

    // Split candidates ranked by coarse gain magnitude, strongest first.
    std::vector<std::size_t> order(k);
    for (std::size_t i = 0; i < k; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double ma = std::abs(coarse.alpha_hat[a]);
        const double mb = std::abs(coarse.alpha_hat[b]);
        if (ma != mb) return ma > mb;
        return a < b;
    });

    const int n_split = split_count;
    auto in_union = [&](double t) {
        for (std::size_t i = 0; i < k; ++i)
            if (t >= coarse.tau_hat_s[i] - coarse.interval_half_width_s[i] &&
                t <= coarse.tau_hat_s[i] + coarse.interval_half_width_s[i])
                return true;
        return false;
    };

    for (int s = 0; s < n_split; ++s) {
        const std::size_t path = order[static_cast<std::size_t>(s)];
        const double center = coarse.tau_hat_s[path];
        double td = tau_d_s;
        if (!in_union(std::max(0.0, center - td)) || !in_union(center + td)) td = 0.5 * tau_d_s;
        const double lo_seed = std::max(0.0, center - td);
        const double hi_seed = center + td;

        CandidateModel m;
        m.id = static_cast<int>(models.size()) + 1;
        m.k = coarse.k_hat + 1;
        m.split_origin = static_cast<int>(path);
        for (std::size_t i = 0; i < k; ++i) {
            if (i == path) {
                m.tau_seeds_s.push_back(lo_seed);
                m.tau_seeds_s.push_back(hi_seed);
                m.interval_half_width_s.push_back(coarse.interval_half_width_s[i]);
                m.interval_half_width_s.push_back(coarse.interval_half_width_s[i]);
            } else {
                m.tau_seeds_s.push_back(coarse.tau_hat_s[i]);
                m.interval_half_width_s.push_back(coarse.interval_half_width_s[i]);
            }
        }
        models.push_back(std::move(m));
    }
    return models;
}

std::vector<double> model_prior(int n_models, const std::vector<double>* weights) {
    if (n_models < 1) throw std::invalid_argument("model_prior: n_models must be >= 1");
    if (!weights) return std::vector<double>(static_cast<std::size_t>(n_models),
                                             1.0 / static_cast<double>(n_models));
    if (weights->size() != static_cast<std::size_t>(n_models))
        throw std::invalid_argument("model_prior: weight count mismatch");
    double sum = 0.0;
    for (double w : *weights) {
        if (w < 0.0) throw std::invalid_argument("model_prior: negative weight");
        sum += w;
    }
    if (sum <= 0.0) throw std::invalid_argument("model_prior: weights sum to zero");
    std::vector<double> out(*weights);
    for (double& w : out) w /= sum;
    return out;
}

double log_prior(const CandidateModel& model,
                 std::span<const double> tau_s,
                 std::span<const double> phi_rel,
                 std::span<const double> delta_s,
                 const PriorConfig& prior) {
    if (tau_s.size() != static_cast<std::size_t>(model.k))
        throw std::invalid_argument("log_prior: tau size mismatch");
    double lp = 0.0;
    for (int p = 0; p < model.k; ++p) {
        const double t = tau_s[static_cast<std::size_t>(p)];
        if (t < model.interval_lo(p) || t > model.interval_hi(p)) return neg_inf();
        lp += log_uniform_width_ns(2.0 * model.interval_half_width_s[static_cast<std::size_t>(p)]);
    }
    lp -= static_cast<double>(phi_rel.size()) * std::log(2.0 * std::numbers::pi);
    for (std::size_t m = 0; m < delta_s.size(); ++m) {
        const double s0 = prior.sigma0(static_cast<int>(m));
        lp += log_normal_ns(delta_s[m], 0.0, s0 * s0);
    }
    return lp;
}

} // namespace mbvbi

#include "mbvbi/signal_model.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "mbvbi/rng.hpp"

namespace mbvbi {

namespace {
constexpr double two_pi = 2.0 * std::numbers::pi;
}

double wrap_2pi(double x) {
    double w = std::fmod(x, two_pi);
    if (w < 0.0) w += two_pi;
    return w;
}

int BandPlan::n_all() const {
    int n = 0;
    for (const auto& b : bands) n += b.n_sub;
    return n;
}

double BandPlan::max_bandwidth_hz() const {
    double bw = 0.0;
    for (const auto& b : bands) bw = std::max(bw, b.fs_hz * b.n_sub);
    return bw;
}

void BandPlan::validate() const {
    if (bands.empty()) throw std::invalid_argument("BandPlan: no bands");
    double prev_fc = -1.0;
    for (const auto& b : bands) {
        if (b.fs_hz <= 0.0) throw std::invalid_argument("BandPlan: fs_hz must be positive");
        if (b.n_sub < 1) throw std::invalid_argument("BandPlan: n_sub must be >= 1");
        if (b.fc_hz < 0.0) throw std::invalid_argument("BandPlan: fc_hz must be nonnegative");
        if (b.fc_hz <= prev_fc)
            throw std::invalid_argument("BandPlan: bands must be sorted by ascending fc_hz");
        prev_fc = b.fc_hz;
    }
}

FreqTables make_freq_tables(const BandPlan& plan) {
    plan.validate();
    FreqTables t;
    const int n = plan.n_all();
    t.f_delay.reserve(n);
    t.f_offset.reserve(n);
    t.f_total.reserve(n);
    t.band.reserve(n);
    const double fc1 = plan.bands.front().fc_hz;
    for (int m = 0; m < plan.n_bands(); ++m) {
        const Band& b = plan.bands[m];
        for (int s = 0; s < b.n_sub; ++s) {
            const double sub = s * b.fs_hz;
            t.f_delay.push_back((b.fc_hz - fc1) + sub);
            t.f_offset.push_back(sub);
            t.f_total.push_back(b.fc_hz + sub);
            t.band.push_back(m);
        }
    }
    return t;
}

void ChannelTruth::validate(const BandPlan& plan) const {
    const auto k = static_cast<std::size_t>(k_paths);
    if (k_paths < 1) throw std::invalid_argument("ChannelTruth: k_paths must be >= 1");
    if (alpha.size() != k || tau_s.size() != k)
        throw std::invalid_argument("ChannelTruth: alpha/tau size mismatch");
    const auto m = static_cast<std::size_t>(plan.n_bands());
    if (phi_rad.size() != m || delta_s.size() != m)
        throw std::invalid_argument("ChannelTruth: phi/delta must have one entry per band");
    for (std::size_t i = 1; i < k; ++i)
        if (tau_s[i] <= tau_s[i - 1])
            throw std::invalid_argument("ChannelTruth: tau_s must be strictly increasing");
    for (double p : phi_rad)
        if (p < 0.0 || p >= two_pi)
            throw std::invalid_argument("ChannelTruth: phi_rad entries must lie in [0, 2pi)");
    if (noise_var <= 0.0) throw std::invalid_argument("ChannelTruth: noise_var must be positive");
}

RefinedParams absorb_reference(const ChannelTruth& truth, const BandPlan& plan) {
    truth.validate(plan);
    RefinedParams p;
    const double fc1 = plan.bands.front().fc_hz;
    const double phi1 = truth.phi_rad.front();
    p.tau_s = truth.tau_s;
    p.alpha.reserve(truth.alpha.size());
    for (int k = 0; k < truth.k_paths; ++k) {
        const double ang = phi1 - two_pi * fc1 * truth.tau_s[static_cast<std::size_t>(k)];
        p.alpha.push_back(truth.alpha[static_cast<std::size_t>(k)] * std::polar(1.0, ang));
    }
    p.phi_rel.reserve(static_cast<std::size_t>(plan.n_bands()) - 1);
    for (int m = 1; m < plan.n_bands(); ++m)
        p.phi_rel.push_back(wrap_2pi(truth.phi_rad[static_cast<std::size_t>(m)] - phi1));
    p.delta_s = truth.delta_s;
    return p;
}

CMatrix steering_matrix(const BandPlan& plan,
                        const std::vector<double>& tau_s,
                        const std::vector<double>& phi_rel,
                        const std::vector<double>& delta_s) {
    plan.validate();
    if (phi_rel.size() + 1 != static_cast<std::size_t>(plan.n_bands()))
        throw std::invalid_argument("steering_matrix: phi_rel must have n_bands-1 entries");
    if (delta_s.size() != static_cast<std::size_t>(plan.n_bands()))
        throw std::invalid_argument("steering_matrix: delta_s must have n_bands entries");
    const FreqTables t = make_freq_tables(plan);
    const int n = plan.n_all();
    CMatrix d;
    d.rows = n;
    d.cols = static_cast<int>(tau_s.size());
    d.a.resize(static_cast<std::size_t>(n) * tau_s.size());
    for (int k = 0; k < d.cols; ++k) {
        const double tau = tau_s[static_cast<std::size_t>(k)];
        for (int i = 0; i < n; ++i) {
            const int m = t.band[static_cast<std::size_t>(i)];
            const double phi = (m == 0) ? 0.0 : phi_rel[static_cast<std::size_t>(m) - 1];
            const double ang = -two_pi * t.f_delay[static_cast<std::size_t>(i)] * tau + phi -
                               two_pi * t.f_offset[static_cast<std::size_t>(i)] *
                                   delta_s[static_cast<std::size_t>(m)];
            d.at(i, k) = std::polar(1.0, ang);
        }
    }
    return d;
}

std::vector<cplx> reconstruct_signal(const BandPlan& plan, const RefinedParams& p) {
    const CMatrix d = steering_matrix(plan, p.tau_s, p.phi_rel, p.delta_s);
    std::vector<cplx> s(static_cast<std::size_t>(d.rows), cplx{0.0, 0.0});
    for (int k = 0; k < d.cols; ++k) {
        const cplx a = p.alpha[static_cast<std::size_t>(k)];
        const cplx* col = d.a.data() + static_cast<std::size_t>(k) * d.rows;
        for (int i = 0; i < d.rows; ++i) s[static_cast<std::size_t>(i)] += a * col[i];
    }
    return s;
}

Observation synthesize(const BandPlan& plan, const ChannelTruth& truth,
                       std::uint64_t seed, bool zero_noise) {
    truth.validate(plan);
    const FreqTables t = make_freq_tables(plan);
    Observation obs;
    obs.plan = plan;
    obs.noise_var = truth.noise_var;
    const int n = plan.n_all();
    obs.y.assign(static_cast<std::size_t>(n), cplx{0.0, 0.0});
    for (int k = 0; k < truth.k_paths; ++k) {
        const cplx a = truth.alpha[static_cast<std::size_t>(k)];
        const double tau = truth.tau_s[static_cast<std::size_t>(k)];
        for (int i = 0; i < n; ++i) {
            const int m = t.band[static_cast<std::size_t>(i)];
            const double ang = -two_pi * t.f_total[static_cast<std::size_t>(i)] * tau -
                               two_pi * t.f_offset[static_cast<std::size_t>(i)] *
                                   truth.delta_s[static_cast<std::size_t>(m)] +
                               truth.phi_rad[static_cast<std::size_t>(m)];
            obs.y[static_cast<std::size_t>(i)] += a * std::polar(1.0, ang);
        }
    }
    if (!zero_noise) {
        Rng rng(derive_seed(seed, {0x6e6f697365ULL}));
        for (auto& v : obs.y) v += rng.cnormal(truth.noise_var);
    }
    return obs;
}

double log_likelihood_from_signal(const Observation& obs, const std::vector<cplx>& s) {
    if (obs.noise_var <= 0.0)
        throw std::invalid_argument("log_likelihood: noise_var must be positive");
    if (s.size() != obs.y.size())
        throw std::invalid_argument("log_likelihood: signal length mismatch");
    double rss = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const cplx r = obs.y[i] - s[i];
        rss += std::norm(r);
    }
    const double n = static_cast<double>(obs.y.size());
    return -n * std::log(std::numbers::pi * obs.noise_var) - rss / obs.noise_var;
}

double log_likelihood(const Observation& obs, const RefinedParams& p) {
    return log_likelihood_from_signal(obs, reconstruct_signal(obs.plan, p));
}

} // namespace mbvbi

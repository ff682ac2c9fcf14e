#pragma once

#include <complex>
#include <cstdint>
#include <vector>

namespace mbvbi {

using cplx = std::complex<double>;

/// One contiguous OFDM subband: carrier frequency, subcarrier spacing and
/// subcarrier count.  Frequency-domain CSI rows for band m are the samples at
/// f_{c,m} + n * f_{s,m}, n = 0..n_sub-1.
struct Band {
    double fc_hz = 0.0;
    double fs_hz = 0.0;
    int n_sub = 0;
};

/// Multiband measurement layout.  Bands are kept sorted by carrier frequency;
/// observation vectors are band-major, subcarrier-minor.
struct BandPlan {
    std::vector<Band> bands;

    int n_bands() const { return static_cast<int>(bands.size()); }
    int n_all() const;
    /// Largest single-band bandwidth n_sub * fs, which sets the coarse delay
    /// resolution of the plan.
    double max_bandwidth_hz() const;
    /// Throws std::invalid_argument on an empty/malformed plan.
    void validate() const;
};

/// Per-row frequency tables, precomputed once per plan.
///   f_delay  : f'_{c,m} + n f_{s,m}   (delay phase slope, relative carrier)
///   f_offset : n f_{s,m}              (timing-offset phase slope)
///   f_total  : f_{c,m} + n f_{s,m}    (absolute carrier + subcarrier)
struct FreqTables {
    std::vector<double> f_delay;
    std::vector<double> f_offset;
    std::vector<double> f_total;
    std::vector<int> band;
};

FreqTables make_freq_tables(const BandPlan& plan);

/// Ground-truth channel: K paths with complex gains, delays (seconds),
/// per-band random phases phi_m (radians, in [0, 2pi)) and per-band timing
/// offsets delta_m (seconds).  noise_var is the complex noise variance per
/// subcarrier sample.
struct ChannelTruth {
    int k_paths = 0;
    std::vector<cplx> alpha;
    std::vector<double> tau_s;
    std::vector<double> phi_rad;
    std::vector<double> delta_s;
    double noise_var = 1.0;

    void validate(const BandPlan& plan) const;
};

/// Reference-absorbed parameterization: band 1's carrier phase and the
/// common phase are folded into the gains, so only relative quantities
/// remain.  phi_rel holds bands 2..M (band 1 is identically zero).
struct RefinedParams {
    std::vector<cplx> alpha;
    std::vector<double> tau_s;
    std::vector<double> phi_rel;
    std::vector<double> delta_s;
};

struct Observation {
    BandPlan plan;
    std::vector<cplx> y;
    double noise_var = 1.0;
};

/// Column-major complex matrix; kept as a plain struct so the public headers
/// stay free of linear-algebra library types.
struct CMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<cplx> a;

    cplx& at(int r, int c) { return a[static_cast<std::size_t>(c) * rows + r]; }
    const cplx& at(int r, int c) const { return a[static_cast<std::size_t>(c) * rows + r]; }
};

/// Folds the band-1 reference phase into the gains:
///   alpha'_k = alpha_k * exp(j phi_1) * exp(-j 2pi f_{c,1} tau_k)
///   phi'_m   = wrap(phi_m - phi_1), m = 2..M
/// The noiseless signal is invariant under this reparameterization.
RefinedParams absorb_reference(const ChannelTruth& truth, const BandPlan& plan);

/// Delay-phase steering matrix D (n_all x K) in the relative-carrier
/// convention; every element has unit modulus.
CMatrix steering_matrix(const BandPlan& plan,
                        const std::vector<double>& tau_s,
                        const std::vector<double>& phi_rel,
                        const std::vector<double>& delta_s);

/// Noiseless reconstruction s = D(tau, phi', delta) * alpha'.
std::vector<cplx> reconstruct_signal(const BandPlan& plan, const RefinedParams& p);

/// Simulates one frequency-domain snapshot from the absolute-carrier model.
/// Noise is circular complex Gaussian with variance truth.noise_var; the
/// zero_noise flag suppresses it while keeping noise_var as metadata (the
/// likelihood still needs a positive variance).
Observation synthesize(const BandPlan& plan, const ChannelTruth& truth,
                       std::uint64_t seed, bool zero_noise = false);

/// Gaussian log-likelihood
///   ln p(y | theta) = -sum_m N_m ln(pi sigma_w^2) - ||y - s(theta)||^2 / sigma_w^2.
double log_likelihood(const Observation& obs, const RefinedParams& p);

/// Same likelihood evaluated from a precomputed reconstruction.
double log_likelihood_from_signal(const Observation& obs, const std::vector<cplx>& s);

/// Wraps an angle into [0, 2pi).
double wrap_2pi(double x);

} // namespace mbvbi

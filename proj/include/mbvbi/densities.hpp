#pragma once

#include <cmath>
#include <limits>
#include <numbers>

namespace mbvbi {

// Delay-valued quantities are stored in seconds but their log-densities are
// expressed per nanosecond.  Particle weights are point masses (unitless), so
// the density unit for the continuous delay blocks is a fixed convention that
// directly sets the per-path complexity cost in the variational objective;
// nanoseconds keep that cost at the intended magnitude for GHz-band plans.
inline constexpr double ns_per_s = 1e9;

inline double neg_inf() { return -std::numeric_limits<double>::infinity(); }

/// ln N(x; mu, var) for a plain (radian- or unitless-) variable.
inline double log_normal(double x, double mu, double var) {
    const double d = x - mu;
    return -0.5 * std::log(2.0 * std::numbers::pi * var) - d * d / (2.0 * var);
}

/// ln N(x; mu, var) for second-valued x with the density taken per ns.
inline double log_normal_ns(double x_s, double mu_s, double var_s2) {
    return log_normal(x_s, mu_s, var_s2) - std::log(ns_per_s);
}

/// ln(1/width) for a uniform density over a second-valued interval, per ns.
inline double log_uniform_width_ns(double width_s) {
    return -std::log(width_s * ns_per_s);
}

} // namespace mbvbi

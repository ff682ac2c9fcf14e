#pragma once

#include <span>
#include <vector>

#include "mbvbi/signal_model.hpp"

namespace mbvbi {

struct LsResult {
    std::vector<cplx> gains;
    bool ridged = false; ///< true when the normal equations needed a ridge term
};

/// Solves min_a ||y - D a||_2 via the normal equations D^H D a = D^H y.
/// A near-singular system (condition number above ~1e12) falls back to a
/// ridge with lambda = 1e-6 * trace(D^H D) / K when ridge_fallback is set,
/// and throws std::runtime_error otherwise.
LsResult solve_ls_gains(const CMatrix& d, std::span<const cplx> y, bool ridge_fallback = true);

} // namespace mbvbi

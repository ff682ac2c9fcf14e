#pragma once

#include <span>
#include <vector>

namespace mbvbi {

/// Per-iteration sample budget across candidate models.
struct Allocation {
    int n_total = 0; ///< virtual total N_s = ceil(B / zeta_max)
    std::vector<int> per_model;
    bool dominance_active = false;

    int drawn() const {
        int s = 0;
        for (int b : per_model) s += b;
        return s;
    }
};

/// Proportional allocation: N_s = ceil(B / zeta_max), B_v = ceil(zeta_v N_s),
/// with every model keeping at least one sample.
Allocation allocate(std::span<const double> zeta, int b_min);

/// Applies the focusing rules on top of a proportional allocation: models
/// with zeta_v < kappa1 * zeta_max drop to one sample, and when
/// kappa2 * zeta_max exceeds the second-highest weight the leader gets
/// exactly b_min while all others drop to one.  The dominance rule wins when
/// both fire.  A non-finite kappa2 disables the dominance rule.
Allocation prune(const Allocation& alloc, std::span<const double> zeta, double kappa1,
                 double kappa2, int b_min);

} // namespace mbvbi

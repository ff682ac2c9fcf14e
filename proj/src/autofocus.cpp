#include "mbvbi/autofocus.hpp"

#include <cmath>
#include <stdexcept>

namespace mbvbi {

namespace {

void check_simplex(std::span<const double> zeta) {
    if (zeta.empty()) throw std::invalid_argument("allocation needs at least one model");
    double sum = 0.0;
    for (double z : zeta) {
        if (!(z >= 0.0)) throw std::invalid_argument("zeta has a negative entry");
        sum += z;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw std::invalid_argument("zeta is not normalized");
}

std::size_t argmax_index(std::span<const double> zeta) {
    std::size_t best = 0;
    for (std::size_t v = 1; v < zeta.size(); ++v)
        if (zeta[v] > zeta[best]) best = v;
    return best;
}

} // namespace

Allocation allocate(std::span<const double> zeta, int b_min) {
    check_simplex(zeta);
    if (b_min < 1) throw std::invalid_argument("sample budget must be positive");

    const std::size_t top = argmax_index(zeta);
    Allocation alloc;
    alloc.n_total = static_cast<int>(std::ceil(b_min / zeta[top]));
    alloc.per_model.resize(zeta.size());
    for (std::size_t v = 0; v < zeta.size(); ++v) {
        const int bv = static_cast<int>(std::ceil(zeta[v] * alloc.n_total));
        alloc.per_model[v] = bv < 1 ? 1 : bv;
    }
    return alloc;
}

Allocation prune(const Allocation& alloc, std::span<const double> zeta, double kappa1,
                 double kappa2, int b_min) {
    check_simplex(zeta);
    if (alloc.per_model.size() != zeta.size())
        throw std::invalid_argument("allocation/zeta size mismatch");

    Allocation out = alloc;
    const std::size_t top = argmax_index(zeta);
    const double z_max = zeta[top];

    double z_second = -1.0;
    for (std::size_t v = 0; v < zeta.size(); ++v)
        if (v != top && zeta[v] > z_second) z_second = zeta[v];

    const bool dominance =
        std::isfinite(kappa2) && zeta.size() > 1 && kappa2 * z_max > z_second;
    if (dominance) {
        out.dominance_active = true;
        for (std::size_t v = 0; v < zeta.size(); ++v)
            out.per_model[v] = v == top ? b_min : 1;
        return out;
    }

    for (std::size_t v = 0; v < zeta.size(); ++v)
        if (zeta[v] < kappa1 * z_max) out.per_model[v] = 1;
    return out;
}

} // namespace mbvbi

#include "mbvbi/lls.hpp"

#include <Eigen/Dense>
#include <stdexcept>

namespace mbvbi {

LsResult solve_ls_gains(const CMatrix& d, std::span<const cplx> y, bool ridge_fallback) {
    if (d.rows <= 0 || d.cols <= 0) throw std::invalid_argument("solve_ls_gains: empty matrix");
    if (static_cast<int>(y.size()) != d.rows)
        throw std::invalid_argument("solve_ls_gains: rhs length mismatch");
    using Mat = Eigen::MatrixXcd;
    using Vec = Eigen::VectorXcd;
    Eigen::Map<const Mat> dm(d.a.data(), d.rows, d.cols);
    Eigen::Map<const Vec> ym(y.data(), d.rows);
    Mat gram = dm.adjoint() * dm;
    const Vec rhs = dm.adjoint() * ym;

    Eigen::SelfAdjointEigenSolver<Mat> es(gram);
    const auto& ev = es.eigenvalues();
    const double emax = ev.maxCoeff();
    const double emin = ev.minCoeff();
    const bool singular = !(emin > 0.0) || !std::isfinite(emax) || emax / emin > 1e12;

    LsResult out;
    if (singular) {
        if (!ridge_fallback)
            throw std::runtime_error("solve_ls_gains: near-singular system and ridge disabled");
        const double lambda = 1e-6 * gram.real().trace() / d.cols;
        gram += lambda * Mat::Identity(d.cols, d.cols);
        out.ridged = true;
    }
    const Vec a = gram.ldlt().solve(rhs);
    out.gains.assign(a.data(), a.data() + d.cols);
    return out;
}

} // namespace mbvbi

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace cascade_iv::linalg {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Rank-revealing QR with the tolerance eps * max(rows, cols) * |R_00|.
/// |R_00| is the largest column norm after pivoting, which tracks the largest
/// singular value to within a factor of sqrt(cols).
struct RankRevealingQr {
    Eigen::ColPivHouseholderQR<MatrixXd> qr;
    Index rank = 0;
    double condition = std::numeric_limits<double>::infinity();
    /// Original index of the first column the factorization found dependent, or -1.
    Index first_dependent = -1;

    explicit RankRevealingQr(const MatrixXd& M) : qr(M.rows(), M.cols())
    {
        const double tol = std::numeric_limits<double>::epsilon() *
                           static_cast<double>(std::max(M.rows(), M.cols()));
        qr.setThreshold(tol);
        qr.compute(M);
        rank = qr.rank();
        const Index n = std::min(M.rows(), M.cols());
        if (n > 0) {
            const double top = std::abs(qr.matrixQR()(0, 0));
            const double bottom = std::abs(qr.matrixQR()(n - 1, n - 1));
            condition = bottom > 0.0 ? top / bottom : std::numeric_limits<double>::infinity();
        }
        if (rank < M.cols())
            first_dependent = qr.colsPermutation().indices()(rank);
    }

    bool full_rank() const { return rank == qr.cols(); }
    MatrixXd solve(const MatrixXd& rhs) const { return qr.solve(rhs); }
};

/// 2-norm condition number of a small square matrix.
inline double condition_number(const MatrixXd& M)
{
    if (M.size() == 0)
        return 1.0;
    Eigen::JacobiSVD<MatrixXd> svd(M);
    const auto& s = svd.singularValues();
    const double smallest = s(s.size() - 1);
    if (!(smallest > 0.0) || !std::isfinite(s(0)))
        return std::numeric_limits<double>::infinity();
    return s(0) / smallest;
}

/// Type-7 sample quantile of already-sorted data.
template <class Range>
double sorted_quantile(const Range& sorted, double q)
{
    const auto n = static_cast<double>(std::size(sorted));
    const double h = (n - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = static_cast<std::size_t>(std::ceil(h));
    return sorted[lo] + (h - std::floor(h)) * (sorted[hi] - sorted[lo]);
}

} // namespace cascade_iv::linalg

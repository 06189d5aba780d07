#pragma once

// First stage, reduced form, just-identified 2SLS and Wald ratios for a
// multi-treatment IV system, with cluster-robust inference.
//
// Every fit residualizes y, A and Z on the controls X first (Frisch-Waugh), then
// works on the partialled K-equation system. The first-stage matrix is oriented
// with rows = treatments and columns = instruments, so pi(j, k) is the effect of
// instrument k on enrollment in treatment j and RF = pi^T beta.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cascade_iv/dataset.hpp"
#include "cascade_iv/error.hpp"
#include "cascade_iv/linalg.hpp"

namespace cascade_iv {

struct EstimatorOptions {
    /// |pi_kk| below this triggers a WeakDiagonal warning.
    double weak_diagonal_threshold = 1e-6;
    /// Pi^T with a larger 2-norm condition number is treated as singular.
    double condition_ceiling = 1e12;
    /// Apply G/(G-1) * (N-1)/(N-K-p) to cluster sandwiches.
    bool small_sample_correction = true;
};

struct FirstStage {
    MatrixXd pi;      ///< K x K, rows = treatments, columns = instruments
    VectorXd diag;    ///< pi_kk
    MatrixXd offdiag; ///< pi with the diagonal zeroed
    /// Per-instrument strength: squared cluster-robust t-statistic of pi_kk.
    VectorXd own_f;
    /// Joint Wald statistic of all instruments in treatment j's equation, divided by K.
    VectorXd joint_f;
    std::vector<std::string> warnings;

    Index k() const { return pi.rows(); }

    static FirstStage from_matrix(const MatrixXd& pi)
    {
        FirstStage fs;
        fs.pi = pi;
        fs.diag = pi.diagonal();
        fs.offdiag = pi;
        fs.offdiag.diagonal().setZero();
        return fs;
    }
};

enum class SeTarget { beta, rf, wald, delta };

namespace detail {

/// The partialled system shared by every fit.
struct Partialled {
    VectorXd y;
    MatrixXd A;
    MatrixXd Z;
    ClusterIndex clusters;
    Index controls = 0; ///< p of the original control matrix
};

inline Partialled partial_system(const Dataset& d)
{
    validate(d, false);
    if (d.Z.cols() != d.A.cols())
        fail(ErrorKind::data, "estimator.NotJustIdentified",
             "need exactly one instrument per treatment (got " + std::to_string(d.Z.cols()) +
                 " instruments for " + std::to_string(d.A.cols()) + " treatments)",
             {{"instruments", d.Z.cols()}, {"treatments", d.A.cols()}});
    if (d.n() <= d.k() + d.p())
        fail(ErrorKind::data, "estimator.TooFewObservations",
             "need N > K + p", {{"n", d.n()}, {"k", d.k()}, {"p", d.p()}});

    linalg::RankRevealingQr xqr(d.X);
    if (!xqr.full_rank())
        fail(ErrorKind::numerical, "estimator.RankDeficientControls",
             "control matrix is rank deficient",
             {{"column", xqr.first_dependent},
              {"name", d.control_names.empty()
                           ? std::string{}
                           : d.control_names[static_cast<std::size_t>(xqr.first_dependent)]},
              {"condition_number", xqr.condition}});

    Partialled s;
    s.controls = d.p();
    MatrixXd stacked(d.n(), 1 + 2 * d.k());
    stacked << d.y, d.A, d.Z;
    stacked -= d.X * xqr.solve(stacked);
    s.y = stacked.col(0);
    s.A = stacked.middleCols(1, d.k());
    s.Z = stacked.middleCols(1 + d.k(), d.k());
    s.clusters = cluster_index(d.cluster);
    return s;
}

inline void require_instrument_rank(const MatrixXd& Z)
{
    linalg::RankRevealingQr zqr(Z);
    if (!zqr.full_rank())
        fail(ErrorKind::numerical, "estimator.SingularInstrumentGram",
             "instrument Gram matrix is singular after partialling out controls",
             {{"column", zqr.first_dependent}, {"condition_number", zqr.condition}});
}

/// OLS of each column of V on Z: returns the K x m coefficient block.
inline MatrixXd regress_on_instruments(const MatrixXd& Z, const MatrixXd& V)
{
    linalg::RankRevealingQr zqr(Z);
    if (!zqr.full_rank())
        fail(ErrorKind::numerical, "estimator.SingularInstrumentGram",
             "instrument Gram matrix is singular after partialling out controls",
             {{"column", zqr.first_dependent}, {"condition_number", zqr.condition}});
    return zqr.solve(V);
}

inline double small_sample_factor(Index n, Index k, Index p, int clusters, bool enabled)
{
    if (!enabled)
        return 1.0;
    const double g = clusters;
    return g / (g - 1.0) * (static_cast<double>(n) - 1.0) / static_cast<double>(n - k - p);
}

/// Sum_g (Sum_{i in g} psi_i)(...)^T for an N x q influence matrix.
inline MatrixXd cluster_meat(const MatrixXd& psi, const ClusterIndex& clusters)
{
    MatrixXd sums = MatrixXd::Zero(clusters.count, psi.cols());
    for (Index i = 0; i < psi.rows(); ++i)
        sums.row(clusters.code[static_cast<std::size_t>(i)]) += psi.row(i);
    return sums.transpose() * sums;
}

inline void require_clusters(const ClusterIndex& clusters)
{
    if (clusters.count < 2)
        fail(ErrorKind::data, "estimator.TooFewClusters", "cluster-robust inference needs at least 2 clusters",
             {{"clusters", clusters.count}});
}

/// Everything needed for point estimates and influence functions.
struct IvSystem {
    Partialled s;
    MatrixXd coef_a; ///< K x K, coef_a(k, j) = coefficient of Z_k in A_j's equation = pi(j, k)
    VectorXd rf;
    MatrixXd H;      ///< Z (Z'Z)^{-1}
    MatrixXd v;      ///< first-stage residuals
    VectorXd u;      ///< reduced-form residuals
};

inline IvSystem build_system(const Dataset& d)
{
    IvSystem sys{partial_system(d), {}, {}, {}, {}, {}};
    const auto& s = sys.s;
    MatrixXd rhs(s.Z.rows(), s.A.cols() + 1);
    rhs << s.A, s.y;
    const MatrixXd coef = regress_on_instruments(s.Z, rhs);
    sys.coef_a = coef.leftCols(s.A.cols());
    sys.rf = coef.col(s.A.cols());
    const MatrixXd gram = s.Z.transpose() * s.Z;
    sys.H = s.Z * gram.ldlt().solve(MatrixXd::Identity(gram.rows(), gram.cols()));
    sys.v = s.A - s.Z * sys.coef_a;
    sys.u = s.y - s.Z * sys.rf;
    return sys;
}

inline VectorXd solve_2sls(const Partialled& s, double condition_ceiling, const MatrixXd& pi_t)
{
    const double cond = linalg::condition_number(pi_t);
    if (!(cond <= condition_ceiling))
        fail(ErrorKind::numerical, "estimator.SingularFirstStage",
             "first-stage matrix is singular or too ill-conditioned to invert",
             {{"condition_number", std::isfinite(cond) ? nlohmann::json(cond) : nlohmann::json("inf")},
              {"ceiling", condition_ceiling}});
    const MatrixXd za = s.Z.transpose() * s.A;
    const VectorXd zy = s.Z.transpose() * s.y;
    return za.colPivHouseholderQr().solve(zy);
}

} // namespace detail

/// Residualizes y, A and Z on X; the result carries a constant as its only control.
inline Dataset partial_out(const Dataset& data)
{
    auto s = detail::partial_system(data);
    Dataset out;
    out.y = std::move(s.y);
    out.A = std::move(s.A);
    out.Z = std::move(s.Z);
    out.X = MatrixXd::Ones(data.n(), 1);
    out.cluster = data.cluster;
    out.group_label = data.group_label;
    out.treatment_names = data.treatment_names;
    out.control_names = {"const"};
    out.aux = data.aux;
    out.aux_names = data.aux_names;
    return out;
}

/// pi(j, k): coefficient on Z_k in the regression of A_j on all instruments and controls.
inline FirstStage fit_first_stage(const Dataset& data, const EstimatorOptions& opts = {})
{
    const auto sys = detail::build_system(data);
    const Index k = sys.coef_a.cols();
    FirstStage fs = FirstStage::from_matrix(sys.coef_a.transpose());

    // Strength diagnostics with a cluster-robust covariance per treatment equation;
    // with a single cluster fall back to observation-level (HC) scores.
    ClusterIndex clusters = sys.s.clusters;
    if (clusters.count < 2) {
        clusters.code.resize(static_cast<std::size_t>(sys.s.y.size()));
        for (std::size_t i = 0; i < clusters.code.size(); ++i)
            clusters.code[i] = static_cast<int>(i);
        clusters.count = static_cast<int>(clusters.code.size());
    }
    const double factor = detail::small_sample_factor(data.n(), k, data.p(), clusters.count,
                                                      opts.small_sample_correction);
    fs.own_f.resize(k);
    fs.joint_f.resize(k);
    for (Index j = 0; j < k; ++j) {
        const MatrixXd psi = sys.H.array().colwise() * sys.v.col(j).array();
        const MatrixXd V = factor * detail::cluster_meat(psi, clusters);
        const VectorXd b = sys.coef_a.col(j);
        fs.own_f(j) = V(j, j) > 0.0 ? b(j) * b(j) / V(j, j) : std::numeric_limits<double>::infinity();
        const Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(V);
        fs.joint_f(j) = b.dot(cod.solve(b)) / static_cast<double>(k);
    }

    for (Index j = 0; j < k; ++j)
        if (std::abs(fs.diag(j)) < opts.weak_diagonal_threshold)
            fs.warnings.push_back("estimator.WeakDiagonal: |pi_" + std::to_string(j + 1) + std::to_string(j + 1) +
                                  "| below " + std::to_string(opts.weak_diagonal_threshold));
    return fs;
}

/// RF_k: coefficient on Z_k in the regression of y on all instruments and controls.
inline VectorXd fit_reduced_form(const Dataset& data)
{
    const auto s = detail::partial_system(data);
    return detail::regress_on_instruments(s.Z, s.y);
}

/// Just-identified IV: beta solves Z~'(y~ - A~ beta) = 0.
inline VectorXd fit_2sls(const Dataset& data, const EstimatorOptions& opts = {})
{
    const auto s = detail::partial_system(data);
    const MatrixXd coef_a = detail::regress_on_instruments(s.Z, s.A);
    return detail::solve_2sls(s, opts.condition_ceiling, coef_a);
}

/// W_k = RF_k / pi_kk.
inline VectorXd wald_ratios(const VectorXd& rf, const FirstStage& fs)
{
    if (rf.size() != fs.k())
        detail::fail(ErrorKind::data, "estimator.LengthMismatch", "reduced form and first stage sizes differ");
    VectorXd w(rf.size());
    for (Index k = 0; k < rf.size(); ++k) {
        if (fs.diag(k) == 0.0)
            detail::fail(ErrorKind::numerical, "estimator.ZeroDiagonal",
                         "own first-stage effect is zero for treatment " + std::to_string(k + 1),
                         {{"k", k + 1}});
        w(k) = rf(k) / fs.diag(k);
    }
    return w;
}

/// Per-observation influence contributions of beta, RF, W and beta - W.
struct Influence {
    VectorXd beta, rf, wald;
    MatrixXd psi_beta, psi_rf, psi_wald;
    ClusterIndex clusters;
    Index n = 0, k = 0, p = 0;
};

inline Influence influence(const Dataset& data, const EstimatorOptions& opts = {})
{
    const auto sys = detail::build_system(data);
    const auto& s = sys.s;
    const Index k = s.A.cols();
    Influence inf;
    inf.n = data.n();
    inf.k = k;
    inf.p = data.p();
    inf.clusters = s.clusters;
    inf.rf = sys.rf;
    inf.beta = detail::solve_2sls(s, opts.condition_ceiling, sys.coef_a);
    const VectorXd diag = sys.coef_a.diagonal();
    for (Index j = 0; j < k; ++j)
        if (diag(j) == 0.0)
            detail::fail(ErrorKind::numerical, "estimator.ZeroDiagonal",
                         "own first-stage effect is zero for treatment " + std::to_string(j + 1),
                         {{"k", j + 1}});
    inf.wald = sys.rf.cwiseQuotient(diag);

    inf.psi_rf = sys.H.array().colwise() * sys.u.array();

    const VectorXd e = s.y - s.A * inf.beta;
    const MatrixXd za = s.Z.transpose() * s.A;
    // Row i of G is ((Z'A)^{-1} z_i)^T.
    const MatrixXd G = za.colPivHouseholderQr().solve(s.Z.transpose()).transpose();
    inf.psi_beta = G.array().colwise() * e.array();

    inf.psi_wald.resize(s.y.size(), k);
    for (Index j = 0; j < k; ++j)
        inf.psi_wald.col(j) = sys.H.col(j).cwiseProduct(sys.u - inf.wald(j) * sys.v.col(j)) / diag(j);
    return inf;
}

/// Cluster sandwich standard errors from an influence matrix.
inline VectorXd sandwich_se(const MatrixXd& psi, const Influence& inf, const EstimatorOptions& opts = {})
{
    detail::require_clusters(inf.clusters);
    const double factor =
        detail::small_sample_factor(inf.n, inf.k, inf.p, inf.clusters.count, opts.small_sample_correction);
    const MatrixXd V = factor * detail::cluster_meat(psi, inf.clusters);
    return V.diagonal().cwiseMax(0.0).cwiseSqrt();
}

/// Cluster-robust standard errors of beta, RF, W or the cascade beta - W.
inline VectorXd cluster_robust_se(const Dataset& data, SeTarget which, const EstimatorOptions& opts = {})
{
    detail::require_clusters(cluster_index(data.cluster));
    const auto inf = influence(data, opts);
    switch (which) {
    case SeTarget::beta: return sandwich_se(inf.psi_beta, inf, opts);
    case SeTarget::rf: return sandwich_se(inf.psi_rf, inf, opts);
    case SeTarget::wald: return sandwich_se(inf.psi_wald, inf, opts);
    case SeTarget::delta: return sandwich_se(inf.psi_beta - inf.psi_wald, inf, opts);
    }
    return {};
}

} // namespace cascade_iv

#pragma once

// Cascade algebra: the total effect T of one extra slot in each program solves
//
//     T_k = W_k + sum_{j != k} (-pi_jk / pi_kk) T_j,   W_k = RF_k / pi_kk,
//
// i.e. (I + D^{-1} P^T) T = D^{-1} RF, which is the same linear system as
// Pi^T T = RF. Written as T = W + M T with the vacancy matrix
// M = -D^{-1} P^T, the Neumann series sum_n M^n W reads the solution as
// successive refill rounds.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cascade_iv/error.hpp"
#include "cascade_iv/estimator.hpp"
#include "cascade_iv/linalg.hpp"
#include "cascade_iv/rng.hpp"

namespace cascade_iv {

struct CascadeOptions {
    /// Refuse to solve above this condition number of Pi^T.
    double condition_ceiling = 1e12;
    /// Warn above this condition number.
    double condition_warning = 1e8;
    int power_iterations = 10000;
    std::uint64_t power_seed = 0x5eed;
};

enum class CascadeMethod { direct, neumann };

struct CascadeSolution {
    VectorXd T;
    VectorXd delta; ///< T - W
    CascadeMethod method = CascadeMethod::direct;
    /// Round n holds M^n W (Neumann mode only).
    std::vector<VectorXd> rounds;
    double rho_estimate = 0.0; ///< spectral radius estimate of |M|
    std::vector<std::string> warnings;
};

/// M(j, k) = -pi_kj / pi_jj for j != k, zero diagonal: vacancies opened in
/// program k per new admit to program j, which refill at T_k.
struct VacancyMatrix {
    MatrixXd M;

    static VacancyMatrix from_first_stage(const FirstStage& fs)
    {
        const Index k = fs.k();
        VacancyMatrix vm{MatrixXd::Zero(k, k)};
        for (Index j = 0; j < k; ++j) {
            if (fs.diag(j) == 0.0)
                detail::fail(ErrorKind::numerical, "cascade.ZeroDiagonal",
                             "own first-stage effect is zero for program " + std::to_string(j + 1), {{"k", j + 1}});
            for (Index m = 0; m < k; ++m)
                if (m != j)
                    vm.M(j, m) = -fs.pi(m, j) / fs.diag(j);
        }
        if (!vm.M.allFinite())
            detail::fail(ErrorKind::numerical, "cascade.NonFiniteVacancyRates", "vacancy matrix has non-finite entries");
        return vm;
    }

    /// r_jk: vacancies created in program j per new admission to program k (1-based ids).
    double vacancy_rate(Index j, Index k) const { return M(k - 1, j - 1); }
};

/// Power iteration on |M| (an upper bound for rho(M)). The iteration runs on
/// |M| + I, which has the same Perron vector and is aperiodic, and returns the
/// Collatz-Wielandt upper bound max_i (|M| x)_i / x_i at the final iterate.
inline double spectral_radius(const MatrixXd& M, int iters = 10000, std::uint64_t seed = 0x5eed)
{
    const Index k = M.rows();
    if (k == 0)
        return 0.0;
    const MatrixXd absM = M.cwiseAbs();
    if (absM.maxCoeff() == 0.0)
        return 0.0;
    Rng rng(seed);
    VectorXd x(k);
    for (Index i = 0; i < k; ++i)
        x(i) = rng.uniform(0.5, 1.5);
    double upper = 0.0;
    for (int it = 0; it < iters; ++it) {
        const VectorXd mx = absM * x;
        double lo = std::numeric_limits<double>::infinity();
        upper = 0.0;
        for (Index i = 0; i < k; ++i) {
            const double ratio = mx(i) / x(i);
            upper = std::max(upper, ratio);
            lo = std::min(lo, ratio);
        }
        if (upper - lo <= 1e-13 * std::max(upper, 1e-300))
            break;
        x = (mx + x) / (mx + x).maxCoeff();
        // Keep the iterate strictly positive so the bound stays valid for reducible |M|.
        x = x.cwiseMax(1e-300);
    }
    return upper;
}

/// Direct solve of (I + D^{-1} P^T) T = D^{-1} RF.
inline CascadeSolution cascade_solve(const FirstStage& fs, const VectorXd& rf, const CascadeOptions& opts = {})
{
    const Index k = fs.k();
    if (rf.size() != k)
        detail::fail(ErrorKind::data, "cascade.LengthMismatch", "reduced form and first stage sizes differ");
    const MatrixXd pi_t = fs.pi.transpose();
    const double cond = linalg::condition_number(pi_t);
    if (!(cond <= opts.condition_ceiling))
        detail::fail(ErrorKind::numerical, "cascade.SingularFirstStage",
                     "first-stage matrix is singular or too ill-conditioned",
                     {{"condition_number", std::isfinite(cond) ? nlohmann::json(cond) : nlohmann::json("inf")},
                      {"ceiling", opts.condition_ceiling}});

    const auto vm = VacancyMatrix::from_first_stage(fs);
    const VectorXd w = rf.cwiseQuotient(fs.diag);
    const MatrixXd system = MatrixXd::Identity(k, k) - vm.M;

    CascadeSolution sol;
    sol.method = CascadeMethod::direct;
    const auto lu = system.fullPivLu();
    sol.T = lu.solve(w);
    // One step of iterative refinement against the original Pi^T T = RF system.
    const VectorXd resid = rf - pi_t * sol.T;
    sol.T += lu.solve(resid.cwiseQuotient(fs.diag));
    sol.delta = sol.T - w;
    sol.rho_estimate = spectral_radius(vm.M, opts.power_iterations, opts.power_seed);
    if (cond > opts.condition_warning)
        sol.warnings.push_back("cascade.IllConditioned: condition number " + std::to_string(cond));
    return sol;
}

/// T = sum_n M^n W, stopping once the next increment is negligible. The stop rule
/// scales tol by (1 - rho) so the truncated tail is itself below tol.
inline CascadeSolution neumann_solve(const VacancyMatrix& vm, const VectorXd& wald, double tol, int max_rounds,
                                     const CascadeOptions& opts = {})
{
    if (wald.size() != vm.M.rows())
        detail::fail(ErrorKind::data, "cascade.LengthMismatch", "Wald vector and vacancy matrix sizes differ");
    if (!(tol > 0.0))
        detail::fail(ErrorKind::usage, "cascade.InvalidTolerance", "tolerance must be positive");
    const double rho = spectral_radius(vm.M, opts.power_iterations, opts.power_seed);
    if (rho >= 1.0)
        detail::fail(ErrorKind::numerical, "cascade.DivergentCascade",
                     "spectral radius of the vacancy matrix is not below one", {{"rho", rho}});

    CascadeSolution sol;
    sol.method = CascadeMethod::neumann;
    sol.rho_estimate = rho;
    sol.T = wald;
    sol.rounds.push_back(wald);
    const double stop = tol * (1.0 - rho);
    VectorXd term = wald;
    for (int round = 1;; ++round) {
        term = vm.M * term;
        if (term.lpNorm<Eigen::Infinity>() <= stop)
            break;
        if (round > max_rounds)
            detail::fail(ErrorKind::numerical, "cascade.MaxRoundsExceeded",
                         "Neumann series did not converge within the round limit",
                         {{"max_rounds", max_rounds}, {"rho", rho}});
        sol.T += term;
        sol.rounds.push_back(term);
    }
    sol.delta = sol.T - wald;
    return sol;
}

/// Delta_k = T_k - W_k.
inline VectorXd cascade_decomposition(const VectorXd& T, const VectorXd& W)
{
    if (T.size() != W.size())
        detail::fail(ErrorKind::data, "cascade.LengthMismatch", "T and W have different lengths",
                     {{"T", T.size()}, {"W", W.size()}});
    return T - W;
}

/// Effect of admitting one more member of group g: the group's own margin
/// (group first stage and reduced form) followed by the full-population cascade tail.
inline VectorXd conditional_entrant_effect(const VectorXd& rf_g, const FirstStage& fs_g, const VectorXd& beta_full)
{
    const Index k = fs_g.k();
    if (rf_g.size() != k || beta_full.size() != k)
        detail::fail(ErrorKind::data, "cascade.LengthMismatch", "inputs have inconsistent lengths");
    VectorXd t(k);
    for (Index m = 0; m < k; ++m) {
        const double own = fs_g.diag(m);
        if (own == 0.0)
            detail::fail(ErrorKind::numerical, "cascade.ZeroDiagonal",
                         "group first-stage effect is zero for program " + std::to_string(m + 1), {{"k", m + 1}});
        double value = rf_g(m) / own;
        for (Index j = 0; j < k; ++j)
            if (j != m)
                value += -fs_g.pi(j, m) / own * beta_full(j);
        t(m) = value;
    }
    return t;
}

struct GroupDecomposition {
    std::map<std::string, VectorXd> beta; ///< per group label
    std::vector<std::string> warnings;
};

/// Full-sample 2SLS with outcome 1[g_i = g] * y_i for each label g. Linearity in y
/// makes the pieces sum to the full-sample beta.
inline GroupDecomposition group_outcome_decomposition(const Dataset& data, const std::vector<std::string>& labels,
                                                      const EstimatorOptions& opts = {})
{
    if (static_cast<Index>(labels.size()) != data.n())
        detail::fail(ErrorKind::data, "cascade.LengthMismatch", "one label per row required");
    auto s = detail::partial_system(data);
    const MatrixXd coef_a = detail::regress_on_instruments(s.Z, s.A);
    (void)detail::solve_2sls(s, opts.condition_ceiling, coef_a);
    const MatrixXd za = s.Z.transpose() * s.A;
    const auto qr = za.colPivHouseholderQr();

    // Partialling is linear in y, so 1[g] * y can be residualized through the same projection.
    linalg::RankRevealingQr xqr(data.X);
    std::map<std::string, std::vector<Index>> rows;
    for (Index i = 0; i < data.n(); ++i)
        rows[labels[static_cast<std::size_t>(i)]].push_back(i);

    GroupDecomposition out;
    for (const auto& [label, members] : rows) {
        VectorXd yg = VectorXd::Zero(data.n());
        for (Index i : members)
            yg(i) = data.y(i);
        if (yg.isZero(0.0))
            out.warnings.push_back("cascade.EmptyGroup: group '" + label + "' has an all-zero outcome");
        const VectorXd yt = yg - data.X * xqr.solve(yg);
        out.beta[label] = qr.solve(s.Z.transpose() * yt);
    }
    return out;
}

struct BlockSpec {
    std::vector<std::string> names;
    std::vector<std::vector<Index>> blocks; ///< 0-based treatment indices
    std::vector<VectorXd> weights;          ///< filled by block_weights
};

/// omega_{m|B} = pi_mm / sum_{j in B} pi_jj. Valid with program-specific
/// instruments and application dummies among the controls.
inline BlockSpec block_weights(const FirstStage& fs, BlockSpec spec)
{
    std::vector<int> seen(static_cast<std::size_t>(fs.k()), 0);
    for (const auto& block : spec.blocks)
        for (Index m : block) {
            if (m < 0 || m >= fs.k())
                detail::fail(ErrorKind::usage, "cascade.InvalidBlock", "block member out of range", {{"index", m}});
            ++seen[static_cast<std::size_t>(m)];
        }
    for (int c : seen)
        if (c != 1)
            detail::fail(ErrorKind::usage, "cascade.InvalidBlock", "blocks must partition the treatments");

    spec.weights.clear();
    for (const auto& block : spec.blocks) {
        VectorXd w(static_cast<Index>(block.size()));
        double total = 0.0;
        for (std::size_t i = 0; i < block.size(); ++i) {
            const double d = fs.diag(block[i]);
            if (!(d > 0.0))
                detail::fail(ErrorKind::numerical, "cascade.NonpositiveDiagonal",
                             "block weights need positive own first-stage effects",
                             {{"m", block[i] + 1}, {"pi_mm", d}});
            w(static_cast<Index>(i)) = d;
            total += d;
        }
        spec.weights.push_back(w / total);
    }
    return spec;
}

/// Implied block coefficients sum_m omega_{m|B} beta_m.
inline VectorXd block_coefficients(const BlockSpec& spec, const VectorXd& beta)
{
    VectorXd out(static_cast<Index>(spec.blocks.size()));
    for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
        double v = 0.0;
        for (std::size_t i = 0; i < spec.blocks[b].size(); ++i)
            v += spec.weights[b](static_cast<Index>(i)) * beta(spec.blocks[b][i]);
        out(static_cast<Index>(b)) = v;
    }
    return out;
}

/// Closed-form beta_2 of the two-program example with pi_21 = 0:
/// (p02 e20 + p12 (e21 + e10)) / (p02 + p12).
inline double three_program_beta2(double p02, double p12, double e20, double e21, double e10)
{
    if (!(p02 + p12 > 0.0))
        detail::fail(ErrorKind::data, "cascade.ZeroComplierMass", "complier mass p02 + p12 must be positive",
                     {{"p02", p02}, {"p12", p12}});
    return (p02 * e20 + p12 * (e21 + e10)) / (p02 + p12);
}

} // namespace cascade_iv

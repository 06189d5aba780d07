#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "cascade_iv/cascade_iv.hpp"
#include "test_support.hpp"

using namespace cascade_iv;
using namespace cascade_iv::testing;

namespace {

/// First stage for two programs with unit-free vacancy rates r21 = -pi21/pi11, r12 = -pi12/pi22.
FirstStage two_by_two(double r21, double r12, double pi11 = 1.0, double pi22 = 1.0)
{
    MatrixXd pi(2, 2);
    pi << pi11, -r12 * pi22, -r21 * pi11, pi22;
    return FirstStage::from_matrix(pi);
}

VectorXd vec2(double a, double b)
{
    VectorXd v(2);
    v << a, b;
    return v;
}

double rel_err(const VectorXd& a, const VectorXd& b)
{
    return (a - b).cwiseAbs().maxCoeff() / std::max(1e-300, b.cwiseAbs().maxCoeff());
}

void expect_code(const std::function<void()>& fn, const std::string& code)
{
    try {
        fn();
        ADD_FAILURE() << "expected " << code;
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), code);
    }
}

} // namespace

TEST(CascadeSolve, DiagonalSystem)
{
    MatrixXd pi = MatrixXd::Zero(2, 2);
    pi(0, 0) = 0.3;
    pi(1, 1) = 0.7;
    const auto sol = cascade_solve(FirstStage::from_matrix(pi), vec2(0.3 * 2.5, 0.7 * -1.25));
    EXPECT_NEAR(sol.T(0), 2.5, 1e-15);
    EXPECT_NEAR(sol.T(1), -1.25, 1e-15);
    EXPECT_EQ(sol.delta, VectorXd::Zero(2));
}

TEST(CascadeSolve, HalfVacancyRatesExample)
{
    const auto fs = two_by_two(0.5, 0.5);
    // W = (1, 0) with unit diagonal means RF = W.
    const auto sol = cascade_solve(fs, vec2(1.0, 0.0));
    EXPECT_NEAR(sol.T(0), 4.0 / 3.0, 1e-14);
    EXPECT_NEAR(sol.T(1), 2.0 / 3.0, 1e-14);
    EXPECT_NEAR(sol.rho_estimate, 0.5, 1e-6);
}

TEST(CascadeSolve, RoundTripProperty)
{
    Rng rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
        const Index k = 1 + static_cast<Index>(rng.below(10));
        const MatrixXd pi = random_pi(rng, k, 0.9);
        const VectorXd beta = random_vector(rng, k, -2.0, 2.0);
        const VectorXd rf = pi.transpose() * beta;
        const auto sol = cascade_solve(FirstStage::from_matrix(pi), rf);
        EXPECT_LE(rel_err(sol.T, beta), 1e-10) << "K=" << k;
        EXPECT_LE((pi.transpose() * sol.T - rf).lpNorm<Eigen::Infinity>(), 1e-10 * rf.lpNorm<Eigen::Infinity>());
    }
}

TEST(CascadeSolve, RecursionProperty)
{
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const Index k = 2 + static_cast<Index>(rng.below(9));
        const MatrixXd pi = random_pi(rng, k, 0.9);
        const VectorXd rf = random_vector(rng, k);
        const auto fs = FirstStage::from_matrix(pi);
        const auto sol = cascade_solve(fs, rf);
        const VectorXd w = wald_ratios(rf, fs);
        for (Index m = 0; m < k; ++m) {
            double rhs = w(m);
            for (Index j = 0; j < k; ++j)
                if (j != m)
                    rhs += -pi(j, m) / pi(m, m) * sol.T(j);
            EXPECT_NEAR(sol.T(m), rhs, 1e-10 * std::max(1.0, std::abs(rhs)));
        }
        EXPECT_EQ(sol.delta, sol.T - w);
    }
}

TEST(CascadeSolve, ClosedFormTwoByTwoProperty)
{
    Rng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        const double r21 = rng.uniform(-0.9, 0.9);
        const double r12 = rng.uniform(-0.9, 0.9);
        const double pi11 = rng.uniform(0.1, 1.0), pi22 = rng.uniform(0.1, 1.0);
        const VectorXd w = random_vector(rng, 2);
        const auto fs = two_by_two(r21, r12, pi11, pi22);
        const VectorXd rf = w.cwiseProduct(fs.diag);
        const double rho = r21 * r12;
        const double t1 = (w(0) + r21 * w(1)) / (1.0 - rho);
        const double t2 = (w(1) + r12 * w(0)) / (1.0 - rho);
        const auto sol = cascade_solve(fs, rf);
        EXPECT_NEAR(sol.T(0), t1, 1e-12);
        EXPECT_NEAR(sol.T(1), t2, 1e-12);
        const auto vm = VacancyMatrix::from_first_stage(fs);
        EXPECT_NEAR(vm.vacancy_rate(2, 1), r21, 1e-15);
        EXPECT_NEAR(vm.vacancy_rate(1, 2), r12, 1e-15);
    }
}

TEST(CascadeSolve, SingularFirstStageRefused)
{
    MatrixXd pi(2, 2);
    pi << 1.0, 1.0, 1.0, 1.0;
    expect_code([&] { cascade_solve(FirstStage::from_matrix(pi), vec2(1, 1)); }, "cascade.SingularFirstStage");
}

TEST(CascadeSolve, IllConditionedWarns)
{
    MatrixXd pi(2, 2);
    pi << 1.0, 1.0 - 1e-9, 1.0 - 1e-9, 1.0;
    const auto sol = cascade_solve(FirstStage::from_matrix(pi), vec2(1, 2));
    ASSERT_FALSE(sol.warnings.empty());
    EXPECT_NE(sol.warnings.front().find("IllConditioned"), std::string::npos);
}

TEST(Neumann, ZeroVacancyMatrixStopsAtRoundZero)
{
    const auto fs = FirstStage::from_matrix(MatrixXd::Identity(3, 3) * 0.4);
    Rng rng(3);
    const VectorXd w = random_vector(rng, 3);
    const auto sol = neumann_solve(VacancyMatrix::from_first_stage(fs), w, 1e-10, 100);
    ASSERT_EQ(sol.rounds.size(), 1u);
    EXPECT_EQ(sol.T, w);
    EXPECT_EQ(sol.rounds.front(), w);
}

TEST(Neumann, HalfRatesRoundPattern)
{
    const auto vm = VacancyMatrix::from_first_stage(two_by_two(0.5, 0.5));
    const auto sol = neumann_solve(vm, vec2(1.0, 0.0), 1e-10, 1000);
    EXPECT_NEAR(sol.T(0), 4.0 / 3.0, 1e-9);
    EXPECT_NEAR(sol.T(1), 2.0 / 3.0, 1e-9);
    // round n contributes 0.5^n, to program 1 on even rounds and program 2 on odd rounds
    for (std::size_t n = 0; n < sol.rounds.size(); ++n) {
        const double p = std::pow(0.5, static_cast<double>(n));
        EXPECT_DOUBLE_EQ(sol.rounds[n](0), n % 2 == 0 ? p : 0.0) << n;
        EXPECT_DOUBLE_EQ(sol.rounds[n](1), n % 2 == 1 ? p : 0.0) << n;
    }
    VectorXd sum = VectorXd::Zero(2);
    for (const auto& r : sol.rounds)
        sum += r;
    EXPECT_LE((sum - sol.T).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Neumann, AgreesWithDirectSolveProperty)
{
    Rng rng(99);
    int accepted = 0;
    while (accepted < 200) {
        const Index k = 1 + static_cast<Index>(rng.below(10));
        const MatrixXd pi = random_pi(rng, k, rng.uniform(0.1, 1.5));
        const auto fs = FirstStage::from_matrix(pi);
        const auto vm = VacancyMatrix::from_first_stage(fs);
        if (spectral_radius(vm.M) >= 0.95)
            continue;
        ++accepted;
        const VectorXd rf = random_vector(rng, k);
        const double tol = 1e-10;
        const auto direct = cascade_solve(fs, rf);
        const auto series = neumann_solve(vm, wald_ratios(rf, fs), tol, 100000);
        EXPECT_LE((direct.T - series.T).cwiseAbs().maxCoeff(), 10 * tol);
    }
}

TEST(Neumann, DivergentCascade)
{
    const auto vm = VacancyMatrix::from_first_stage(two_by_two(2.0, 1.0));
    try {
        neumann_solve(vm, vec2(1, 0), 1e-10, 100);
        FAIL() << "expected DivergentCascade";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "cascade.DivergentCascade");
        EXPECT_NEAR(e.details().at("rho").get<double>(), std::sqrt(2.0), 1e-6);
    }
}

TEST(Neumann, MaxRoundsExceeded)
{
    const auto vm = VacancyMatrix::from_first_stage(two_by_two(0.99, 0.99));
    expect_code([&] { neumann_solve(vm, vec2(1, 0), 1e-12, 10); }, "cascade.MaxRoundsExceeded");
}

TEST(SpectralRadius, Examples)
{
    EXPECT_EQ(spectral_radius(MatrixXd::Zero(3, 3)), 0.0);
    MatrixXd M(2, 2);
    M << 0.0, 0.5, 0.5, 0.0;
    EXPECT_NEAR(spectral_radius(M), 0.5, 1e-6);
}

TEST(SpectralRadius, BoundsEigenvaluesProperty)
{
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const Index k = 1 + static_cast<Index>(rng.below(10));
        MatrixXd M(k, k);
        for (Index i = 0; i < k; ++i)
            for (Index j = 0; j < k; ++j)
                M(i, j) = i == j ? 0.0 : rng.uniform(-0.5, 0.5);
        const double rho_abs = M.cwiseAbs().eigenvalues().cwiseAbs().maxCoeff();
        const double rho = M.eigenvalues().cwiseAbs().maxCoeff();
        const double est = spectral_radius(M);
        EXPECT_GE(est, rho_abs - 1e-9);
        EXPECT_LE(est, rho_abs + 1e-6 * std::max(1.0, rho_abs));
        EXPECT_GE(est + 1e-9, rho);
        EXPECT_EQ(est, spectral_radius(M));
    }
}

TEST(Decomposition, Examples)
{
    EXPECT_NEAR(cascade_decomposition(vec2(0.0278, 0.0854), vec2(0.00449, 0.0598))(0), 0.0233, 0.0005);
    EXPECT_NEAR(cascade_decomposition(vec2(0.0278, 0.0854), vec2(0.00449, 0.0598))(1), 0.0256, 0.0005);
    EXPECT_EQ(cascade_decomposition(vec2(1, 2), vec2(1, 2)), VectorXd::Zero(2));
    expect_code([] { cascade_decomposition(VectorXd::Zero(2), VectorXd::Zero(3)); }, "cascade.LengthMismatch");
}

TEST(ConditionalEntrant, DegenerateGroupingEqualsCascadeSolve)
{
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const Index k = 1 + static_cast<Index>(rng.below(8));
        const auto fs = FirstStage::from_matrix(random_pi(rng, k, 0.8));
        const VectorXd rf = random_vector(rng, k);
        const auto sol = cascade_solve(fs, rf);
        EXPECT_LE((conditional_entrant_effect(rf, fs, sol.T) - sol.T).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(ConditionalEntrant, DiagonalGroupFirstStageGivesGroupWald)
{
    MatrixXd pi = MatrixXd::Zero(2, 2);
    pi(0, 0) = 0.4;
    pi(1, 1) = 0.2;
    const auto fs = FirstStage::from_matrix(pi);
    const VectorXd rf = vec2(0.1, 0.05);
    EXPECT_LE((conditional_entrant_effect(rf, fs, vec2(9, 9)) - wald_ratios(rf, fs)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ConditionalEntrant, ZeroGroupDiagonal)
{
    MatrixXd pi = MatrixXd::Identity(2, 2);
    pi(1, 1) = 0.0;
    expect_code([&] { conditional_entrant_effect(vec2(1, 1), FirstStage::from_matrix(pi), vec2(0, 0)); },
                "cascade.ZeroDiagonal");
}

TEST(GroupDecomposition, AdditiveProperty)
{
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        const Index k = 1 + static_cast<Index>(rng.below(5));
        auto iv = linear_iv(300 + trial, 500, k, 50);
        const int groups = 2 + static_cast<int>(rng.below(3));
        std::vector<std::string> labels;
        for (Index i = 0; i < iv.data.n(); ++i)
            labels.push_back("g" + std::to_string(rng.below(static_cast<std::uint64_t>(groups))));
        const auto dec = group_outcome_decomposition(iv.data, labels);
        VectorXd sum = VectorXd::Zero(k);
        for (const auto& [label, b] : dec.beta)
            sum += b;
        const VectorXd beta = fit_2sls(iv.data);
        EXPECT_LE((sum - beta).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(GroupDecomposition, SingleGroupIsBeta)
{
    auto iv = linear_iv(31, 400, 3, 40);
    const auto dec = group_outcome_decomposition(iv.data, std::vector<std::string>(400, "all"));
    EXPECT_LE((dec.beta.at("all") - fit_2sls(iv.data)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GroupDecomposition, OnlyRespondingGroupCarriesEffect)
{
    VectorXd beta(2);
    beta << 0.8, -0.5;
    Dataset d = diagonal_lottery(32, 4000, 2, VectorXd::Zero(2));
    Rng rng(3);
    std::vector<std::string> labels;
    for (Index i = 0; i < d.n(); ++i) {
        const bool f = rng.uniform() < 0.5;
        labels.push_back(f ? "f" : "m");
        if (f)
            d.y(i) += d.A.row(i).dot(beta);
    }
    d.group_label = labels;
    const auto dec = group_outcome_decomposition(d, labels);
    const VectorXd full = fit_2sls(d);
    const VectorXd se = cluster_robust_se(d, SeTarget::beta);
    // beta^(f)* carries the whole effect: the m part is the 2SLS of noise-only outcomes.
    Dataset dm = d;
    for (Index i = 0; i < d.n(); ++i)
        dm.y(i) = labels[static_cast<std::size_t>(i)] == "m" ? d.y(i) : 0.0;
    const VectorXd se_m = cluster_robust_se(dm, SeTarget::beta);
    for (Index k = 0; k < 2; ++k) {
        EXPECT_LE(std::abs(dec.beta.at("f")(k) - full(k)), 3.0 * se_m(k));
        EXPECT_LE(std::abs(dec.beta.at("m")(k)), 3.0 * se_m(k));
        EXPECT_LE(std::abs(full(k) - 0.5 * beta(k)), 3.0 * se(k));
    }
}

TEST(GroupDecomposition, EmptyGroupWarns)
{
    auto iv = linear_iv(33, 300, 2, 30);
    std::vector<std::string> labels(300, "a");
    for (Index i = 0; i < 300; i += 2) {
        labels[static_cast<std::size_t>(i)] = "b";
        iv.data.y(i) = 0.0;
    }
    const auto dec = group_outcome_decomposition(iv.data, labels);
    ASSERT_EQ(dec.warnings.size(), 1u);
    EXPECT_EQ(dec.beta.at("b"), VectorXd::Zero(2));
}

TEST(BlockWeights, Examples)
{
    MatrixXd pi = MatrixXd::Identity(3, 3);
    pi(0, 0) = 0.3;
    pi(1, 1) = 0.1;
    pi(2, 2) = 0.5;
    BlockSpec spec;
    spec.names = {"pair", "single"};
    spec.blocks = {{0, 1}, {2}};
    const auto w = block_weights(FirstStage::from_matrix(pi), spec);
    EXPECT_NEAR(w.weights[0](0), 0.75, 1e-15);
    EXPECT_NEAR(w.weights[0](1), 0.25, 1e-15);
    EXPECT_EQ(w.weights[1](0), 1.0);
    const VectorXd coef = block_coefficients(w, VectorXd::Constant(3, 0.37));
    EXPECT_NEAR(coef(0), 0.37, 1e-15);
    EXPECT_NEAR(coef(1), 0.37, 1e-15);
}

TEST(BlockWeights, PositiveAndSumToOneProperty)
{
    Rng rng(14);
    for (int trial = 0; trial < 100; ++trial) {
        const Index k = 1 + static_cast<Index>(rng.below(10));
        const auto fs = FirstStage::from_matrix(random_pi(rng, k));
        BlockSpec spec;
        std::map<std::uint64_t, std::vector<Index>> blocks;
        for (Index m = 0; m < k; ++m)
            blocks[rng.below(3)].push_back(m);
        for (auto& [b, members] : blocks) {
            spec.names.push_back("b" + std::to_string(b));
            spec.blocks.push_back(members);
        }
        const auto w = block_weights(fs, spec);
        for (const auto& v : w.weights) {
            EXPECT_GT(v.minCoeff(), 0.0);
            EXPECT_NEAR(v.sum(), 1.0, 1e-12);
        }
    }
}

TEST(BlockWeights, NonpositiveDiagonalRejected)
{
    MatrixXd pi = MatrixXd::Identity(2, 2);
    pi(1, 1) = -0.1;
    BlockSpec spec;
    spec.names = {"all"};
    spec.blocks = {{0, 1}};
    expect_code([&] { block_weights(FirstStage::from_matrix(pi), spec); }, "cascade.NonpositiveDiagonal");
}

TEST(ThreeProgram, Examples)
{
    EXPECT_DOUBLE_EQ(three_program_beta2(0.7, 0.0, 1.3, 0.2, 0.9), 1.3);
    EXPECT_NEAR(three_program_beta2(0.5, 0.5, 1.0, 0.3, 0.4), 0.85, 1e-15);
    expect_code([] { three_program_beta2(0.0, 0.0, 1, 1, 1); }, "cascade.ZeroComplierMass");
}

TEST(ThreeProgram, TelescopingProperty)
{
    Rng rng(15);
    for (int trial = 0; trial < 1000; ++trial) {
        const double e21 = rng.uniform(-1, 1), e10 = rng.uniform(-1, 1);
        double p02 = rng.uniform(), p12 = rng.uniform();
        if (p02 + p12 == 0.0)
            continue;
        EXPECT_NEAR(three_program_beta2(p02, p12, e21 + e10, e21, e10), e21 + e10, 1e-14);
    }
}

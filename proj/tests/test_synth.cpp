#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "cascade_iv/cascade_iv.hpp"

using namespace cascade_iv;

namespace {

void expect_code(const std::function<void()>& fn, const std::string& code)
{
    try {
        fn();
        ADD_FAILURE() << "expected " << code;
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), code);
    }
}

Index column_of(const Dataset& d, const std::string& name)
{
    for (std::size_t j = 0; j < d.treatment_names.size(); ++j)
        if (d.treatment_names[j] == name)
            return static_cast<Index>(j);
    ADD_FAILURE() << "no treatment " << name;
    return 0;
}

MechanismConfig config(std::vector<int> caps)
{
    MechanismConfig cfg;
    cfg.capacities = std::move(caps);
    return cfg;
}

SynthConfig scenario_config(int N, double sigma_h, ComplierTargets t, std::uint64_t seed)
{
    SynthConfig s;
    s.N = N;
    s.K = 2;
    s.brackets = 50;
    s.sigma_h = sigma_h;
    s.complier_targets = t;
    s.seed = seed;
    return s;
}

} // namespace

TEST(Generate, HomogeneitySwitchIsExact)
{
    SynthConfig s;
    s.N = 5000;
    s.K = 4;
    s.base_effects = {0.2, -0.1, 0.05, 0.7};
    s.sigma_h = 0.0;
    s.group_effects = {1, 2, 3, 4};
    const auto pop = generate_population(s);
    for (Index i = 0; i < pop.po.rows(); ++i)
        for (Index j = 1; j <= 4; ++j)
            EXPECT_NEAR(pop.po(i, j) - pop.po(i, 0), s.base_effects[static_cast<std::size_t>(j - 1)],
                        1e-15 * (4.0 + std::abs(pop.po(i, 0))));
}

TEST(Generate, HeterogeneityScaleMatters)
{
    SynthConfig s;
    s.N = 5000;
    s.K = 2;
    s.sigma_h = 1.0;
    const auto pop = generate_population(s);
    const VectorXd d1 = pop.po.col(1) - pop.po.col(0);
    EXPECT_GT((d1.array() - d1.mean()).square().mean(), 0.5);
}

TEST(Generate, SameSeedBitIdentical)
{
    SynthConfig s;
    s.N = 3000;
    s.K = 3;
    s.sigma_h = 0.7;
    s.seed = 1234;
    const auto a = generate_population(s);
    const auto b = generate_population(s);
    EXPECT_EQ(a.merit, b.merit);
    EXPECT_EQ(a.prefs, b.prefs);
    EXPECT_EQ(a.group, b.group);
    EXPECT_EQ(a.po, b.po);
    EXPECT_EQ(a.covariates, b.covariates);
    s.seed = 1235;
    EXPECT_NE(generate_population(s).po, a.po);
}

TEST(Generate, PreferencesAreValidRankings)
{
    SynthConfig s;
    s.N = 4000;
    s.K = 5;
    s.max_list = 3;
    const auto pop = generate_population(s);
    validate(pop);
    for (const auto& p : pop.prefs)
        EXPECT_LE(p.size(), 3u);
}

TEST(Generate, MeritTiltsTowardSelectivePrograms)
{
    SynthConfig s;
    s.N = 20000;
    s.K = 2;
    s.selectivity = {2.0, 1.0};
    const auto pop = generate_population(s);
    double top_first = 0, top_n = 0, low_first = 0, low_n = 0;
    for (std::size_t i = 0; i < pop.size(); ++i) {
        const bool first = !pop.prefs[i].empty() && pop.prefs[i][0] == 1;
        if (pop.merit[i] >= 40) {
            top_first += first;
            ++top_n;
        } else if (pop.merit[i] < 10) {
            low_first += first;
            ++low_n;
        }
    }
    EXPECT_GT(top_first / top_n, low_first / low_n);
}

TEST(Generate, InvalidConfigRejected)
{
    SynthConfig s;
    s.N = 0;
    expect_code([&] { generate_population(s); }, "synth.InvalidConfig");
    s = SynthConfig{};
    s.sigma_h = -1.0;
    expect_code([&] { generate_population(s); }, "synth.InvalidConfig");
    s = SynthConfig{};
    s.base_effects = {1.0};
    expect_code([&] { generate_population(s); }, "synth.InvalidConfig");
}

TEST(Generate, OrderedSelectivityLeavesUpperProgramUntouched)
{
    // Program 2 is the most selective, so program 1's lottery margin sits below
    // program 2's cutoff and cannot move program-2 enrollment.
    SynthConfig s;
    s.N = 30000;
    s.K = 3;
    s.selectivity = {1.5, 2.0, 1.0};
    s.sigma_h = 1.0;
    s.seed = 8;
    const auto pop = generate_population(s);
    const auto d = simulate_iv_dataset(pop, config(synth_capacities(s)), 40, 3);
    const Index c1 = column_of(d, "1"), c2 = column_of(d, "2");
    const auto fs = fit_first_stage(d);
    Dataset enrol2 = d;
    enrol2.y = d.A.col(c2);
    const VectorXd se = cluster_robust_se(enrol2, SeTarget::rf);
    EXPECT_LE(std::abs(fs.pi(c2, c1)), 3.0 * se(c1) + 1e-12);
    EXPECT_GT(fs.pi(c1, c1), 0.1);
}

TEST(Scenario, PredictionExamples)
{
    auto s = scenario_config(20000, 0.0, ComplierTargets{0.5, 0.0, 1.0, 0.3, 0.4}, 2);
    EXPECT_DOUBLE_EQ(scenario_three_program(s).predicted_beta2, 1.0);
    s.complier_targets = ComplierTargets{0.5, 0.5, 1.0, 0.3, 0.4};
    EXPECT_NEAR(scenario_three_program(s).predicted_beta2, 0.85, 1e-15);
}

TEST(Scenario, InfeasibleTargets)
{
    auto s = scenario_config(20000, 0.0, ComplierTargets{0.7, 0.6, 1, 1, 1}, 1);
    expect_code([&] { scenario_three_program(s); }, "synth.InfeasibleComplierTargets");
    s.complier_targets = ComplierTargets{0.0, 0.0, 1, 1, 1};
    expect_code([&] { scenario_three_program(s); }, "synth.InfeasibleComplierTargets");
    s.complier_targets = ComplierTargets{};
    s.brackets = 4;
    expect_code([&] { scenario_three_program(s); }, "synth.InfeasibleComplierTargets");
    s.brackets = 50;
    s.N = 60;
    expect_code([&] { scenario_three_program(s); }, "synth.InfeasibleComplierTargets");
    s.N = 20000;
    s.K = 3;
    expect_code([&] { scenario_three_program(s); }, "synth.InvalidConfig");
}

TEST(Scenario, RealizedComplierSharesNearTargets)
{
    for (const auto& t : {ComplierTargets{0.5, 0.5, 1, 0.3, 0.4}, ComplierTargets{0.3, 0.6, 1, 0.3, 0.4},
                          ComplierTargets{0.2, 0.3, 1, 0.3, 0.4}}) {
        const auto sc = scenario_three_program(scenario_config(50000, 1.0, t, 5));
        EXPECT_NEAR(sc.realized_p02, t.p02, 0.05);
        EXPECT_NEAR(sc.realized_p12, t.p12, 0.05);
        // classify program 2's pivotal group from realized lists across lotteries
        double n02 = 0, n12 = 0, total = 0;
        for (std::uint64_t r = 0; r < 10; ++r) {
            auto cfg = config(sc.capacities);
            cfg.lottery_seed = derive_seed(17, r);
            const auto res = run_clearing(sc.population, cfg);
            const int cut1 = res.cutoffs[0].merit;
            for (const auto& g : res.pivotal_groups) {
                if (g.program != 2)
                    continue;
                for (int i : g.members) {
                    const auto& prefs = sc.population.prefs[static_cast<std::size_t>(i)];
                    const bool lists1 = std::find(prefs.begin(), prefs.end(), 1) != prefs.end();
                    const bool wants2 = prefs.front() == 2;
                    const int m = sc.population.merit[static_cast<std::size_t>(i)];
                    n02 += wants2 && !lists1;
                    n12 += wants2 && lists1 && m >= cut1;
                    ++total;
                }
            }
        }
        EXPECT_NEAR(n02 / total, t.p02, 0.05);
        EXPECT_NEAR(n12 / total, t.p12, 0.05);
    }
}

TEST(Scenario, SimulatedBetaMatchesPrediction)
{
    const auto sc = scenario_three_program(scenario_config(50000, 1.0, ComplierTargets{0.5, 0.5, 1.0, 0.3, 0.4}, 9));
    const auto d = simulate_iv_dataset(sc.population, config(sc.capacities), 60, 4);
    const Index c1 = column_of(d, "1"), c2 = column_of(d, "2");
    const VectorXd beta = fit_2sls(d);
    const VectorXd se = cluster_robust_se(d, SeTarget::beta);
    EXPECT_NEAR(beta(c2), sc.predicted_beta2, 3.0 * se(c2));
    EXPECT_NEAR(beta(c1), 0.4, 3.0 * se(c1));
    // program 1's lottery never moves program-2 enrollment
    const auto fs = fit_first_stage(d);
    EXPECT_LE(std::abs(fs.pi(c2, c1)), 1e-12);
}

TEST(Scenario, HomogeneousEffectsTelescope)
{
    const double d1 = 0.25, d2 = 0.6;
    const auto sc =
        scenario_three_program(scenario_config(50000, 0.0, ComplierTargets{0.4, 0.5, d2, d2 - d1, d1}, 10));
    EXPECT_NEAR(sc.predicted_beta2, d2, 1e-15);
    const auto d = simulate_iv_dataset(sc.population, config(sc.capacities), 60, 5);
    const Index c2 = column_of(d, "2");
    const VectorXd beta = fit_2sls(d);
    const VectorXd se = cluster_robust_se(d, SeTarget::beta);
    EXPECT_NEAR(beta(c2), d2, 3.0 * se(c2));
}

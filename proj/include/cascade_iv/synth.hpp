#pragma once

// Synthetic applicant populations.
//
// Preferences: u_ij = q_j (1 + tilt * z_i) + shift_j * female_i + tau * e_ij with
// z_i the merit bracket rescaled to [-1/2, 1/2] and e_ij standard logistic; the
// outside option has utility u0 + tau * e_i0. Applicants list the programs that
// beat the outside option, best first. tau is the substitution knob.
//
// Outcomes: Y(0) = s0 * N(0,1) and
// Y(j) = Y(0) + Delta_j + sigma_h (gamma_j theta_i + idio * eta_ij + g_j female_i),
// with theta_i partly driven by merit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cascade_iv/cascade.hpp"
#include "cascade_iv/error.hpp"
#include "cascade_iv/mechanism.hpp"
#include "cascade_iv/rng.hpp"

namespace cascade_iv {

struct ComplierTargets {
    double p02 = 0.5;
    double p12 = 0.5;
    double e20 = 1.0; ///< E[Y2 - Y0 | 0 -> 2]
    double e21 = 0.3; ///< E[Y2 - Y1 | 1 -> 2]
    double e10 = 0.4; ///< E[Y1 - Y0 | 0 -> 1]
};

struct SynthConfig {
    int N = 20000;
    int K = 3;
    int brackets = 50;
    std::vector<double> bracket_weights; ///< empty: uniform

    std::vector<double> selectivity; ///< q_j; empty: evenly spaced from 2 down to 1
    double taste_noise = 0.5;
    double merit_tilt = 1.0;
    double outside_utility = 0.0;
    int max_list = 0; ///< 0: no truncation

    std::vector<double> capacity_share; ///< seats as a share of N; empty: 0.6 / K each

    std::vector<double> base_effects; ///< Delta_j; empty: zeros
    double sigma_h = 0.0;
    std::vector<double> type_loading; ///< gamma_j; empty: alternating +1, -1
    double idiosyncratic = 1.0;
    double baseline_sd = 1.0;

    double group_share = 0.5;          ///< share labelled "f"
    std::vector<double> group_effects; ///< g_j
    std::vector<double> group_taste;   ///< preference shift for group "f"

    std::optional<ComplierTargets> complier_targets;
    std::uint64_t seed = 1;
};

namespace detail {

inline std::vector<double> fill_default(const std::vector<double>& v, int k, double value, const char* name)
{
    if (v.empty())
        return std::vector<double>(static_cast<std::size_t>(k), value);
    if (static_cast<int>(v.size()) != k)
        fail(ErrorKind::usage, "synth.InvalidConfig", std::string(name) + " must have one entry per program");
    return v;
}

inline int draw_bracket(Rng& rng, const std::vector<double>& cumulative)
{
    const double u = rng.uniform() * cumulative.back();
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    return static_cast<int>(std::min<std::ptrdiff_t>(it - cumulative.begin(),
                                                     static_cast<std::ptrdiff_t>(cumulative.size()) - 1));
}

/// Fixed sub-streams so each component stays stable when another changes.
enum class Stream : std::uint64_t { merit = 1, taste, outcome, group, covariate };

inline Rng stream(std::uint64_t seed, Stream s) { return Rng(derive_seed(seed, static_cast<std::uint64_t>(s))); }

} // namespace detail

inline void validate(const SynthConfig& cfg)
{
    auto bad = [](const std::string& msg) { detail::fail(ErrorKind::usage, "synth.InvalidConfig", msg); };
    if (cfg.N < 1)
        bad("N must be at least 1");
    if (cfg.K < 1)
        bad("K must be at least 1");
    if (cfg.K > 60000)
        bad("K is too large");
    if (cfg.brackets < 1)
        bad("need at least one merit bracket");
    if (!(cfg.sigma_h >= 0.0))
        bad("sigma_h must be non-negative");
    if (!(cfg.taste_noise >= 0.0))
        bad("taste_noise must be non-negative");
    if (!(cfg.group_share >= 0.0 && cfg.group_share <= 1.0))
        bad("group_share must lie in [0, 1]");
    if (!cfg.bracket_weights.empty()) {
        if (static_cast<int>(cfg.bracket_weights.size()) != cfg.brackets)
            bad("bracket_weights must have one entry per bracket");
        for (double w : cfg.bracket_weights)
            if (!(w >= 0.0))
                bad("bracket weights must be non-negative");
        if (!(std::accumulate(cfg.bracket_weights.begin(), cfg.bracket_weights.end(), 0.0) > 0.0))
            bad("bracket weights must not all be zero");
    }
}

/// Seats per program implied by capacity_share, at least one each.
inline std::vector<int> synth_capacities(const SynthConfig& cfg)
{
    validate(cfg);
    const auto share = detail::fill_default(cfg.capacity_share, cfg.K, 0.6 / cfg.K, "capacity_share");
    std::vector<int> caps;
    for (double s : share)
        caps.push_back(std::max(1, static_cast<int>(std::lround(s * cfg.N))));
    return caps;
}

inline Population generate_population(const SynthConfig& cfg)
{
    validate(cfg);
    const int K = cfg.K;
    const auto N = static_cast<std::size_t>(cfg.N);
    std::vector<double> q = cfg.selectivity;
    if (q.empty())
        for (int j = 0; j < K; ++j)
            q.push_back(K == 1 ? 1.0 : 2.0 - static_cast<double>(j) / (K - 1));
    q = detail::fill_default(q, K, 0.0, "selectivity");
    const auto delta = detail::fill_default(cfg.base_effects, K, 0.0, "base_effects");
    std::vector<double> gamma = cfg.type_loading;
    if (gamma.empty())
        for (int j = 0; j < K; ++j)
            gamma.push_back(j % 2 == 0 ? 1.0 : -1.0);
    gamma = detail::fill_default(gamma, K, 0.0, "type_loading");
    const auto g_eff = detail::fill_default(cfg.group_effects, K, 0.0, "group_effects");
    const auto g_taste = detail::fill_default(cfg.group_taste, K, 0.0, "group_taste");

    std::vector<double> cumulative(static_cast<std::size_t>(cfg.brackets), 1.0);
    if (!cfg.bracket_weights.empty())
        cumulative = cfg.bracket_weights;
    std::partial_sum(cumulative.begin(), cumulative.end(), cumulative.begin());

    Population pop;
    pop.programs = K;
    pop.merit.resize(N);
    pop.prefs.resize(N);
    pop.group.resize(N);
    pop.po.resize(static_cast<Index>(N), K + 1);
    pop.covariates.resize(static_cast<Index>(N), 3);
    pop.covariate_names = {"merit", "prior", "female"};

    auto merit_rng = detail::stream(cfg.seed, detail::Stream::merit);
    auto taste_rng = detail::stream(cfg.seed, detail::Stream::taste);
    auto outcome_rng = detail::stream(cfg.seed, detail::Stream::outcome);
    auto group_rng = detail::stream(cfg.seed, detail::Stream::group);
    auto cov_rng = detail::stream(cfg.seed, detail::Stream::covariate);

    const double scale = cfg.brackets > 1 ? 1.0 / (cfg.brackets - 1) : 0.0;
    std::vector<std::pair<double, int>> utility;
    for (std::size_t i = 0; i < N; ++i) {
        const auto row = static_cast<Index>(i);
        const int m = detail::draw_bracket(merit_rng, cumulative);
        const bool female = group_rng.uniform() < cfg.group_share;
        const double z = cfg.brackets > 1 ? m * scale - 0.5 : 0.0;
        pop.merit[i] = m;
        pop.group[i] = female ? "f" : "m";

        const double outside = cfg.outside_utility + cfg.taste_noise * taste_rng.logistic();
        utility.clear();
        for (int j = 0; j < K; ++j) {
            const auto js = static_cast<std::size_t>(j);
            const double u = q[js] * (1.0 + cfg.merit_tilt * z) + (female ? g_taste[js] : 0.0) +
                             cfg.taste_noise * taste_rng.logistic();
            if (u > outside)
                utility.emplace_back(u, j + 1);
        }
        std::stable_sort(utility.begin(), utility.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        if (cfg.max_list > 0 && static_cast<int>(utility.size()) > cfg.max_list)
            utility.resize(static_cast<std::size_t>(cfg.max_list));
        for (const auto& [u, j] : utility)
            pop.prefs[i].push_back(j);

        const double theta = 2.0 * z + outcome_rng.normal();
        const double y0 = cfg.baseline_sd * outcome_rng.normal();
        pop.po(row, 0) = y0;
        for (int j = 0; j < K; ++j) {
            const auto js = static_cast<std::size_t>(j);
            const double het = gamma[js] * theta + cfg.idiosyncratic * outcome_rng.normal() +
                               (female ? g_eff[js] : 0.0);
            pop.po(row, j + 1) = cfg.sigma_h == 0.0 ? y0 + delta[js] : y0 + delta[js] + cfg.sigma_h * het;
        }

        pop.covariates(row, 0) = m;
        pop.covariates(row, 1) = 0.5 * y0 + cov_rng.normal();
        pop.covariates(row, 2) = female ? 1.0 : 0.0;
    }
    return pop;
}

struct ThreeProgramScenario {
    Population population;
    std::vector<int> capacities;
    double predicted_beta2 = 0.0;
    double realized_p02 = 0.0; ///< share of program 2's pivotal group that are 0 -> 2 compliers
    double realized_p12 = 0.0; ///< share that are 1 -> 2 compliers
    int program2_cutoff = 0;   ///< merit bracket of program 2's margin
    int program1_cutoff = 0;   ///< merit bracket of program 1's margin
};

/// Two programs plus the outside option with program 2 the more selective. Applicants
/// are placed by merit bracket so program 2's lottery margin holds 0 -> 2 and 1 -> 2
/// compliers at the target shares (the rest are program-1 never-takers), while program
/// 1's margin lies in a lower bracket whose applicants list only program 1, so the
/// program-1 lottery cannot move program-2 enrollment. Heterogeneous terms are
/// demeaned within each (bracket, preference pattern) cell so the margin means equal
/// the configured effects exactly.
inline ThreeProgramScenario scenario_three_program(const SynthConfig& cfg)
{
    validate(cfg);
    if (cfg.K != 2)
        detail::fail(ErrorKind::usage, "synth.InvalidConfig",
                     "the three-program scenario needs K = 2 programs besides the outside option");
    if (!cfg.complier_targets)
        detail::fail(ErrorKind::usage, "synth.InvalidConfig", "complier_targets must be set");
    const auto t = *cfg.complier_targets;
    if (!(t.p02 >= 0.0 && t.p12 >= 0.0 && t.p02 + t.p12 > 0.0 && t.p02 + t.p12 <= 1.0))
        detail::fail(ErrorKind::data, "synth.InfeasibleComplierTargets",
                     "targets need p02, p12 >= 0 and 0 < p02 + p12 <= 1", {{"p02", t.p02}, {"p12", t.p12}});
    if (cfg.brackets < 5)
        detail::fail(ErrorKind::data, "synth.InfeasibleComplierTargets", "need at least 5 merit brackets");

    const int B = cfg.brackets;
    const int top = B - 1, b2 = B - 2, b1 = (B - 2) / 2 - 1 > 0 ? (B - 2) / 2 - 1 : 1;

    std::vector<double> cumulative(static_cast<std::size_t>(B), 1.0);
    if (!cfg.bracket_weights.empty())
        cumulative = cfg.bracket_weights;
    std::partial_sum(cumulative.begin(), cumulative.end(), cumulative.begin());

    auto merit_rng = detail::stream(cfg.seed, detail::Stream::merit);
    auto outcome_rng = detail::stream(cfg.seed, detail::Stream::outcome);
    auto group_rng = detail::stream(cfg.seed, detail::Stream::group);
    auto cov_rng = detail::stream(cfg.seed, detail::Stream::covariate);

    const auto N = static_cast<std::size_t>(cfg.N);
    ThreeProgramScenario sc;
    auto& pop = sc.population;
    pop.programs = 2;
    pop.merit.resize(N);
    pop.prefs.resize(N);
    pop.group.resize(N);
    pop.po.resize(static_cast<Index>(N), 3);
    pop.covariates.resize(static_cast<Index>(N), 3);
    pop.covariate_names = {"merit", "prior", "female"};

    for (std::size_t i = 0; i < N; ++i)
        pop.merit[i] = detail::draw_bracket(merit_rng, cumulative);

    std::vector<std::size_t> at_b2;
    for (std::size_t i = 0; i < N; ++i)
        if (pop.merit[i] == b2)
            at_b2.push_back(i);
    const auto n_b2 = static_cast<long>(at_b2.size());
    const long n02 = std::lround(t.p02 * n_b2);
    const long n12 = std::min(n_b2 - n02, std::lround(t.p12 * n_b2));

    // cells: 0 top [2,1]; 1 b2 [2]; 2 b2 [2,1]; 3 b2 [1,2]; 4 middle [1]; 5 b1 [1]; 6 below [1]
    std::vector<int> cell(N);
    long n_top = 0, n_mid = 0, n_b1 = 0;
    for (std::size_t i = 0; i < N; ++i) {
        const int m = pop.merit[i];
        if (m == top) {
            cell[i] = 0;
            ++n_top;
        } else if (m > b1 && m < b2) {
            cell[i] = 4;
            ++n_mid;
        } else if (m == b1) {
            cell[i] = 5;
            ++n_b1;
        } else if (m < b1) {
            cell[i] = 6;
        }
    }
    for (long r = 0; r < n_b2; ++r)
        cell[at_b2[static_cast<std::size_t>(r)]] = r < n02 ? 1 : (r < n02 + n12 ? 2 : 3);
    static const std::vector<int> pattern[] = {{2, 1}, {2}, {2, 1}, {1, 2}, {1}, {1}, {1}};
    for (std::size_t i = 0; i < N; ++i)
        pop.prefs[i] = pattern[cell[i]];

    const long wanting = n02 + n12;
    if (wanting < 2 || n_b1 < 4)
        detail::fail(ErrorKind::data, "synth.InfeasibleComplierTargets",
                     "population too small for the requested margins",
                     {{"program2_margin", wanting}, {"program1_margin", n_b1}});
    const long q2 = n_top + wanting / 2;
    const double expected_losers = static_cast<double>(n12) * (1.0 - static_cast<double>(wanting / 2) / wanting);
    const long q1 = (n_b2 - wanting) + n_mid + std::lround(expected_losers) + n_b1 / 2;
    sc.capacities = {static_cast<int>(q1), static_cast<int>(q2)};
    sc.program1_cutoff = b1;
    sc.program2_cutoff = b2;
    sc.realized_p02 = n_b2 > 0 ? static_cast<double>(n02) / n_b2 : 0.0;
    sc.realized_p12 = n_b2 > 0 ? static_cast<double>(n12) / n_b2 : 0.0;
    sc.predicted_beta2 = three_program_beta2(t.p02, t.p12, t.e20, t.e21, t.e10);

    // heterogeneity draws, then demean within cells
    Eigen::MatrixXd xi(static_cast<Index>(N), 2);
    std::vector<double> y0(N);
    for (std::size_t i = 0; i < N; ++i) {
        const auto row = static_cast<Index>(i);
        y0[i] = cfg.baseline_sd * outcome_rng.normal();
        xi(row, 0) = cfg.sigma_h * outcome_rng.normal();
        xi(row, 1) = cfg.sigma_h * outcome_rng.normal();
        pop.group[i] = group_rng.uniform() < cfg.group_share ? "f" : "m";
        pop.covariates(row, 0) = pop.merit[i];
        pop.covariates(row, 1) = 0.5 * y0[i] + cov_rng.normal();
        pop.covariates(row, 2) = pop.group[i] == "f" ? 1.0 : 0.0;
    }
    if (cfg.sigma_h > 0.0) {
        std::map<std::pair<int, int>, std::pair<Eigen::Vector2d, long>> sums;
        for (std::size_t i = 0; i < N; ++i) {
            auto& s = sums[{pop.merit[i], cell[i]}];
            if (s.second == 0)
                s.first.setZero();
            s.first += xi.row(static_cast<Index>(i)).transpose();
            ++s.second;
        }
        for (std::size_t i = 0; i < N; ++i) {
            const auto& s = sums[{pop.merit[i], cell[i]}];
            xi.row(static_cast<Index>(i)) -= (s.first / static_cast<double>(s.second)).transpose();
        }
    }
    for (std::size_t i = 0; i < N; ++i) {
        const auto row = static_cast<Index>(i);
        const double y1 = y0[i] + t.e10 + xi(row, 0);
        pop.po(row, 0) = y0[i];
        pop.po(row, 1) = y1;
        pop.po(row, 2) = cell[i] == 1 ? y0[i] + t.e20 + xi(row, 1) : y1 + t.e21 + xi(row, 1);
    }
    return sc;
}

} // namespace cascade_iv

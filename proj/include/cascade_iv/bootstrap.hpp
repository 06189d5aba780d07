#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cascade_iv/dataset.hpp"
#include "cascade_iv/error.hpp"
#include "cascade_iv/estimate_set.hpp"
#include "cascade_iv/linalg.hpp"
#include "cascade_iv/parallel.hpp"
#include "cascade_iv/rng.hpp"

namespace cascade_iv {

enum class BootstrapStatistic { beta, wald, cascade_delta, conditional_entrant };

inline std::optional<BootstrapStatistic> parse_statistic(const std::string& name)
{
    if (name == "beta")
        return BootstrapStatistic::beta;
    if (name == "wald")
        return BootstrapStatistic::wald;
    if (name == "cascade_delta")
        return BootstrapStatistic::cascade_delta;
    if (name == "conditional_entrant")
        return BootstrapStatistic::conditional_entrant;
    return std::nullopt;
}

using StatisticFn = std::function<VectorXd(const Dataset&)>;

/// Named statistics; `group` selects the label for conditional_entrant.
inline StatisticFn named_statistic(BootstrapStatistic which, std::string group = {},
                                   EstimatorOptions opts = {})
{
    switch (which) {
    case BootstrapStatistic::beta:
        return [opts](const Dataset& d) { return fit_2sls(d, opts); };
    case BootstrapStatistic::wald:
        return [opts](const Dataset& d) { return wald_ratios(fit_reduced_form(d), fit_first_stage(d, opts)); };
    case BootstrapStatistic::cascade_delta:
        return [opts](const Dataset& d) {
            const auto fs = fit_first_stage(d, opts);
            const VectorXd rf = fit_reduced_form(d);
            return cascade_decomposition(cascade_solve(fs, rf).T, wald_ratios(rf, fs));
        };
    case BootstrapStatistic::conditional_entrant:
        if (group.empty())
            detail::fail(ErrorKind::usage, "estimator.MissingGroup", "conditional_entrant needs a group label");
        return [opts, group](const Dataset& d) { return conditional_entrant_for_label(d, group, opts); };
    }
    return {};
}

struct BootstrapResult {
    VectorXd estimate; ///< statistic on the original data
    VectorXd se;       ///< standard deviation across successful replications
    VectorXd ci_lo;    ///< 2.5th percentile
    VectorXd ci_hi;    ///< 97.5th percentile
    int reps = 0;
    int failed = 0;
};

struct BootstrapOptions {
    /// Abort when more than this share of replications fail.
    double max_failure_share = 0.10;
    unsigned threads = 0;
};

/// Resamples whole clusters with replacement, G draws per replication.
/// Replication r uses the stream derive_seed(seed, r) and writes into slot r,
/// so the output does not depend on evaluation order or thread count.
inline BootstrapResult cluster_bootstrap(const Dataset& data, const StatisticFn& statistic, int reps,
                                         std::uint64_t seed, const BootstrapOptions& opts = {})
{
    if (reps < 2)
        detail::fail(ErrorKind::usage, "estimator.InvalidReplications", "bootstrap needs at least 2 replications");

    const auto clusters = cluster_index(data.cluster);
    std::vector<std::vector<Index>> members(static_cast<std::size_t>(clusters.count));
    for (Index i = 0; i < data.n(); ++i)
        members[static_cast<std::size_t>(clusters.code[static_cast<std::size_t>(i)])].push_back(i);

    BootstrapResult out;
    out.estimate = statistic(data);
    const Index q = out.estimate.size();

    std::vector<std::optional<VectorXd>> draws(static_cast<std::size_t>(reps));
    parallel_for(
        static_cast<std::size_t>(reps),
        [&](std::size_t r) {
            Rng rng(derive_seed(seed, r));
            std::vector<Index> rows;
            std::vector<std::string> ids;
            rows.reserve(static_cast<std::size_t>(data.n()));
            for (int g = 0; g < clusters.count; ++g) {
                const auto pick = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(clusters.count)));
                for (Index i : members[pick]) {
                    rows.push_back(i);
                    ids.push_back("b" + std::to_string(g));
                }
            }
            Dataset resampled = subset(data, rows);
            resampled.cluster = std::move(ids);
            try {
                VectorXd v = statistic(resampled);
                if (v.size() == q && v.allFinite())
                    draws[r] = std::move(v);
            } catch (const Error&) {
                // counted below
            }
        },
        opts.threads);

    std::vector<VectorXd> ok;
    for (auto& d : draws)
        if (d)
            ok.push_back(std::move(*d));
    out.reps = reps;
    out.failed = reps - static_cast<int>(ok.size());
    if (out.failed > opts.max_failure_share * reps || ok.size() < 2)
        detail::fail(ErrorKind::numerical, "estimator.StatisticFailedInReplication",
                     "too many bootstrap replications failed", {{"failed", out.failed}, {"reps", reps}});

    const auto m = static_cast<double>(ok.size());
    out.se.resize(q);
    out.ci_lo.resize(q);
    out.ci_hi.resize(q);
    std::vector<double> col(ok.size());
    for (Index c = 0; c < q; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < ok.size(); ++r) {
            col[r] = ok[r](c);
            mean += col[r];
        }
        mean /= m;
        double ss = 0.0;
        for (double v : col)
            ss += (v - mean) * (v - mean);
        out.se(c) = std::sqrt(ss / (m - 1.0));
        std::sort(col.begin(), col.end());
        out.ci_lo(c) = linalg::sorted_quantile(col, 0.025);
        out.ci_hi(c) = linalg::sorted_quantile(col, 0.975);
    }
    return out;
}

} // namespace cascade_iv

#pragma once

#include <string>
#include <vector>

#include "cascade_iv/cascade.hpp"
#include "cascade_iv/estimator.hpp"

namespace cascade_iv {

/// Point estimates and cluster-robust standard errors for one dataset, keyed by
/// treatment position.
struct EstimateSet {
    std::vector<std::string> names;
    VectorXd beta, rf, wald, cascade_T, cascade_delta;
    VectorXd se_beta, se_rf, se_wald, se_delta;
    FirstStage first_stage;
    Index n_obs = 0;
    int n_clusters = 0;
    std::vector<std::string> warnings;
};

inline EstimateSet estimate(const Dataset& data, const EstimatorOptions& opts = {},
                            const CascadeOptions& copts = {})
{
    EstimateSet est;
    est.names = data.treatment_names;
    est.first_stage = fit_first_stage(data, opts);
    const auto inf = influence(data, opts);
    est.beta = inf.beta;
    est.rf = inf.rf;
    est.wald = wald_ratios(est.rf, est.first_stage);
    const auto sol = cascade_solve(est.first_stage, est.rf, copts);
    est.cascade_T = sol.T;
    est.cascade_delta = cascade_decomposition(sol.T, est.wald);
    est.n_obs = data.n();
    est.n_clusters = inf.clusters.count;
    est.warnings = est.first_stage.warnings;
    est.warnings.insert(est.warnings.end(), sol.warnings.begin(), sol.warnings.end());
    if (inf.clusters.count >= 2) {
        est.se_beta = sandwich_se(inf.psi_beta, inf, opts);
        est.se_rf = sandwich_se(inf.psi_rf, inf, opts);
        est.se_wald = sandwich_se(inf.psi_wald, inf, opts);
        est.se_delta = sandwich_se(inf.psi_beta - inf.psi_wald, inf, opts);
    } else {
        const VectorXd nan = VectorXd::Constant(data.k(), std::numeric_limits<double>::quiet_NaN());
        est.se_beta = est.se_rf = est.se_wald = est.se_delta = nan;
        est.warnings.push_back("estimator.TooFewClusters: standard errors not available");
    }
    return est;
}

/// T^{|g} for the rows labelled `label`, with the full-sample beta as cascade tail.
inline VectorXd conditional_entrant_for_label(const Dataset& data, const std::string& label,
                                              const EstimatorOptions& opts = {})
{
    const VectorXd beta = fit_2sls(data, opts);
    const Dataset sub = subset(data, rows_with_label(data, label));
    const FirstStage fs_g = fit_first_stage(sub, opts);
    const VectorXd rf_g = fit_reduced_form(sub);
    return conditional_entrant_effect(rf_g, fs_g, beta);
}

} // namespace cascade_iv

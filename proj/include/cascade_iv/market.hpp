#pragma once

// Fixed-supply market with linear demand. Consumer i demands
// q_i(p) = a_i + B_i p, prices clear aggregate demand against supply, and the
// consumer's outcome is c_i' q_i.

#include <cstdint>
#include <string>
#include <vector>

#include "cascade_iv/dataset.hpp"
#include "cascade_iv/error.hpp"
#include "cascade_iv/linalg.hpp"
#include "cascade_iv/rng.hpp"

namespace cascade_iv {

struct MarketConfig {
    std::vector<VectorXd> intercepts;  ///< a_i, length K each
    std::vector<MatrixXd> slopes;      ///< B_i, K x K each
    std::vector<VectorXd> outcome;     ///< c_i, length K each
    VectorXd supply;                   ///< Q-bar

    int goods() const { return static_cast<int>(supply.size()); }
    std::size_t consumers() const { return intercepts.size(); }
};

inline MatrixXd aggregate_slope(const MarketConfig& m)
{
    MatrixXd B = MatrixXd::Zero(m.goods(), m.goods());
    for (const auto& b : m.slopes)
        B += b;
    return B;
}

inline VectorXd aggregate_intercept(const MarketConfig& m)
{
    VectorXd a = VectorXd::Zero(m.goods());
    for (const auto& v : m.intercepts)
        a += v;
    return a;
}

inline void validate(const MarketConfig& m)
{
    const auto K = static_cast<Index>(m.goods());
    auto bad = [](const std::string& msg) { detail::fail(ErrorKind::data, "mechanism.InvalidMarket", msg); };
    if (K < 1 || m.consumers() == 0)
        bad("market needs at least one good and one consumer");
    if (m.slopes.size() != m.consumers() || m.outcome.size() != m.consumers())
        bad("per-consumer fields have inconsistent lengths");
    for (std::size_t i = 0; i < m.consumers(); ++i)
        if (m.intercepts[i].size() != K || m.slopes[i].rows() != K || m.slopes[i].cols() != K ||
            m.outcome[i].size() != K)
            bad("consumer " + std::to_string(i) + " has the wrong dimension");
    for (Index k = 0; k < K; ++k)
        if (!(m.supply(k) > 0.0))
            bad("supply must be positive");
}

/// Market-clearing prices: sum_i q_i(p) = supply.
inline VectorXd equilibrium_prices(const MarketConfig& m, const VectorXd& supply)
{
    const MatrixXd B = aggregate_slope(m);
    const double cond = linalg::condition_number(B);
    if (!std::isfinite(cond) || cond > 1e12)
        detail::fail(ErrorKind::numerical, "mechanism.NoEquilibrium", "aggregate demand slope is not invertible",
                     {{"condition_number", cond}});
    return B.fullPivLu().solve(supply - aggregate_intercept(m));
}

inline double total_outcome(const MarketConfig& m, const VectorXd& prices)
{
    double total = 0.0;
    for (std::size_t i = 0; i < m.consumers(); ++i)
        total += m.outcome[i].dot(m.intercepts[i] + m.slopes[i] * prices);
    return total;
}

struct MarketOracle {
    double effect = 0.0; ///< change in total outcome per unit of added supply
    VectorXd prices;     ///< baseline equilibrium
    VectorXd shifted;    ///< equilibrium with supply + step e_k
};

/// Finite-difference effect of expanding good k (1-based) by `step`.
inline MarketOracle market_oracle(const MarketConfig& m, int k, double step = 1.0)
{
    validate(m);
    if (k < 1 || k > m.goods())
        detail::fail(ErrorKind::usage, "mechanism.UnknownProgram", "unknown good " + std::to_string(k));
    if (!(step > 0.0))
        detail::fail(ErrorKind::usage, "mechanism.InvalidStep", "step must be positive");
    MarketOracle out;
    out.prices = equilibrium_prices(m, m.supply);
    VectorXd supply = m.supply;
    supply(k - 1) += step;
    out.shifted = equilibrium_prices(m, supply);
    out.effect = (total_outcome(m, out.shifted) - total_outcome(m, out.prices)) / step;
    return out;
}

/// Balanced panel of every consumer in `markets` markets, each with its own
/// price vector drawn around equilibrium. Z holds prices, A the quantities
/// demanded, and clusters are markets. Treatments are continuous here.
inline Dataset market_iv_dataset(const MarketConfig& m, int markets, double price_spread, std::uint64_t seed)
{
    validate(m);
    if (markets < 2)
        detail::fail(ErrorKind::usage, "mechanism.InvalidReplications", "need at least two markets");
    const Index K = m.goods();
    const VectorXd p0 = equilibrium_prices(m, m.supply);
    const auto n = static_cast<Index>(m.consumers()) * markets;

    Dataset d;
    d.y.resize(n);
    d.A.resize(n, K);
    d.Z.resize(n, K);
    d.X = MatrixXd::Ones(n, 1);
    d.treatment_names = default_names(K);
    d.control_names = {"const"};
    d.cluster.reserve(static_cast<std::size_t>(n));

    Index row = 0;
    for (int mk = 0; mk < markets; ++mk) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(mk)));
        VectorXd p(K);
        for (Index k = 0; k < K; ++k)
            p(k) = p0(k) + price_spread * rng.normal();
        for (std::size_t i = 0; i < m.consumers(); ++i, ++row) {
            const VectorXd q = m.intercepts[i] + m.slopes[i] * p;
            d.A.row(row) = q.transpose();
            d.Z.row(row) = p.transpose();
            d.y(row) = m.outcome[i].dot(q);
            d.cluster.push_back("m" + std::to_string(mk));
        }
    }
    return d;
}

/// Two substitute goods with heterogeneous consumers.
inline MarketConfig two_good_substitutes(std::size_t consumers, std::uint64_t seed)
{
    MarketConfig m;
    Rng rng(seed);
    for (std::size_t i = 0; i < consumers; ++i) {
        VectorXd a(2);
        a << 10.0 + rng.uniform(0.0, 5.0), 8.0 + rng.uniform(0.0, 5.0);
        const double own1 = rng.uniform(1.0, 2.0), own2 = rng.uniform(1.0, 2.0);
        const double cross = rng.uniform(0.1, 0.5);
        MatrixXd B(2, 2);
        B << -own1, cross, cross, -own2;
        VectorXd c(2);
        c << rng.uniform(0.0, 2.0), rng.uniform(-1.0, 1.0);
        m.intercepts.push_back(a);
        m.slopes.push_back(B);
        m.outcome.push_back(c);
    }
    m.supply = VectorXd::Constant(2, 5.0 * static_cast<double>(consumers));
    return m;
}

} // namespace cascade_iv

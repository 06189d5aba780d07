#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "cascade_iv/error.hpp"

namespace cascade_iv {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Rectangular applicant-level data for a just-identified multi-treatment IV
/// system: outcome y, K treatment indicators A, K instruments Z, controls X
/// (which include one constant column) and a cluster id per row.
struct Dataset {
    VectorXd y;
    MatrixXd A;
    MatrixXd Z;
    MatrixXd X;
    std::vector<std::string> cluster;
    std::optional<std::vector<std::string>> group_label;

    /// Treatment names, used for the a_<name>/z_<name> CSV columns.
    std::vector<std::string> treatment_names;
    std::vector<std::string> control_names;

    /// Predetermined covariates carried along for balance checks (w_<name> columns).
    MatrixXd aux;
    std::vector<std::string> aux_names;

    Index n() const { return y.size(); }
    Index k() const { return A.cols(); }
    Index p() const { return X.cols(); }
};

/// Dense 0..G-1 cluster codes in order of first appearance.
struct ClusterIndex {
    std::vector<int> code;
    int count = 0;
};

inline ClusterIndex cluster_index(const std::vector<std::string>& ids)
{
    ClusterIndex out;
    out.code.resize(ids.size());
    std::unordered_map<std::string, int> seen;
    seen.reserve(ids.size() / 4 + 1);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto [it, inserted] = seen.try_emplace(ids[i], out.count);
        if (inserted)
            ++out.count;
        out.code[i] = it->second;
    }
    return out;
}

inline bool is_constant_column(const MatrixXd& X, Index j)
{
    if (X.rows() == 0)
        return false;
    const double v = X(0, j);
    return v != 0.0 && (X.col(j).array() == v).all();
}

inline std::vector<std::string> default_names(Index k)
{
    std::vector<std::string> names;
    for (Index j = 0; j < k; ++j)
        names.push_back(std::to_string(j + 1));
    return names;
}

/// Checks the structural invariants. Binary treatments are required unless the
/// caller is working with continuous allocations (the market variant).
inline void validate(const Dataset& d, bool require_binary_treatments = true)
{
    const Index n = d.n();
    auto schema = [](const std::string& msg) { detail::fail(ErrorKind::data, "io.SchemaError", msg); };
    if (n == 0)
        schema("dataset has no rows");
    if (d.A.rows() != n || d.Z.rows() != n || d.X.rows() != n)
        schema("all blocks must have the same number of rows");
    if (static_cast<Index>(d.cluster.size()) != n)
        schema("cluster column length differs from row count");
    if (d.group_label && static_cast<Index>(d.group_label->size()) != n)
        schema("group column length differs from row count");
    if (d.aux.size() > 0 && d.aux.rows() != n)
        schema("auxiliary covariates length differs from row count");
    if (static_cast<Index>(d.treatment_names.size()) != d.k())
        schema("treatment names do not match the number of treatment columns");
    for (const auto& c : d.cluster)
        if (c.empty())
            schema("empty cluster id");
    if (require_binary_treatments && !((d.A.array() == 0.0) || (d.A.array() == 1.0)).all())
        schema("treatment indicators must be 0/1");
    if (!d.y.allFinite() || !d.A.allFinite() || !d.Z.allFinite() || !d.X.allFinite())
        schema("non-finite values in dataset");
    int constants = 0;
    for (Index j = 0; j < d.p(); ++j)
        constants += is_constant_column(d.X, j) ? 1 : 0;
    if (constants != 1)
        schema("controls must contain exactly one constant column (found " + std::to_string(constants) + ")");
}

/// Row subset. Control columns that become degenerate in the subset (constant
/// dummies other than the intercept) are dropped so the subset stays estimable.
inline Dataset subset(const Dataset& d, const std::vector<Index>& rows)
{
    const auto m = static_cast<Index>(rows.size());
    Dataset out;
    out.y.resize(m);
    out.A.resize(m, d.k());
    out.Z.resize(m, d.Z.cols());
    MatrixXd X(m, d.p());
    if (d.aux.size() > 0)
        out.aux.resize(m, d.aux.cols());
    out.cluster.reserve(rows.size());
    if (d.group_label)
        out.group_label.emplace().reserve(rows.size());
    for (Index r = 0; r < m; ++r) {
        const Index i = rows[static_cast<std::size_t>(r)];
        out.y(r) = d.y(i);
        out.A.row(r) = d.A.row(i);
        out.Z.row(r) = d.Z.row(i);
        X.row(r) = d.X.row(i);
        if (d.aux.size() > 0)
            out.aux.row(r) = d.aux.row(i);
        out.cluster.push_back(d.cluster[static_cast<std::size_t>(i)]);
        if (d.group_label)
            out.group_label->push_back((*d.group_label)[static_cast<std::size_t>(i)]);
    }
    std::vector<Index> keep;
    bool have_constant = false;
    for (Index j = 0; j < d.p(); ++j) {
        const bool constant = m > 0 && (X.col(j).array() == X(0, j)).all();
        if (!constant) {
            keep.push_back(j);
        } else if (!have_constant && X(0, j) != 0.0) {
            keep.push_back(j);
            have_constant = true;
        }
    }
    out.X.resize(m, static_cast<Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c) {
        out.X.col(static_cast<Index>(c)) = X.col(keep[c]);
        if (!d.control_names.empty())
            out.control_names.push_back(d.control_names[static_cast<std::size_t>(keep[c])]);
    }
    out.treatment_names = d.treatment_names;
    out.aux_names = d.aux_names;
    return out;
}

/// Rows whose group label equals `label`.
inline std::vector<Index> rows_with_label(const Dataset& d, const std::string& label)
{
    if (!d.group_label)
        detail::fail(ErrorKind::data, "io.SchemaError", "dataset has no group labels");
    std::vector<Index> rows;
    for (Index i = 0; i < d.n(); ++i)
        if ((*d.group_label)[static_cast<std::size_t>(i)] == label)
            rows.push_back(i);
    return rows;
}

} // namespace cascade_iv

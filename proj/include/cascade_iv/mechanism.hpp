#pragma once

// Centralized ranked-queue admission with lottery tie-breaking.
//
// Every program ranks its applicants by (merit bracket, lottery draw), both
// descending, and seats are assigned by applicant-proposing deferred
// acceptance. Lottery draws are a pure function of (seed, applicant, program),
// so reruns with a changed capacity vector see exactly the same tie-breaks.
//
// Program ids are 1..K; 0 is the outside option, which lets po(i, assignment)
// index potential outcomes directly.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <map>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include <boost/math/distributions/fisher_f.hpp>

#include "cascade_iv/dataset.hpp"
#include "cascade_iv/estimator.hpp"
#include "cascade_iv/error.hpp"
#include "cascade_iv/parallel.hpp"
#include "cascade_iv/rng.hpp"

namespace cascade_iv {

struct Population {
    int programs = 0;
    std::vector<int> merit;
    std::vector<std::vector<int>> prefs; ///< most preferred first; outside option implicit last
    MatrixXd po;                         ///< N x (K+1): Y(0), Y(1), ..., Y(K)
    std::vector<std::string> group;      ///< optional categorical label, empty when absent
    MatrixXd covariates;                 ///< predetermined characteristics
    std::vector<std::string> covariate_names;

    std::size_t size() const { return merit.size(); }
};

inline void validate(const Population& pop)
{
    auto bad = [](const std::string& msg) { detail::fail(ErrorKind::data, "mechanism.InvalidPopulation", msg); };
    const std::size_t n = pop.size();
    if (n == 0)
        bad("population is empty");
    if (pop.prefs.size() != n || static_cast<std::size_t>(pop.po.rows()) != n)
        bad("population fields have inconsistent lengths");
    if (pop.po.cols() != pop.programs + 1)
        bad("potential outcomes need K+1 columns");
    if (!pop.po.allFinite())
        bad("potential outcomes must be finite");
    if (!pop.group.empty() && pop.group.size() != n)
        bad("group labels have the wrong length");
    if (pop.covariates.size() > 0 && static_cast<std::size_t>(pop.covariates.rows()) != n)
        bad("covariates have the wrong length");
    std::vector<int> seen(static_cast<std::size_t>(pop.programs) + 1, -1);
    for (std::size_t i = 0; i < n; ++i)
        for (int k : pop.prefs[i]) {
            if (k < 1 || k > pop.programs)
                bad("preference list of applicant " + std::to_string(i) + " names an unknown program");
            if (seen[static_cast<std::size_t>(k)] == static_cast<int>(i))
                bad("preference list of applicant " + std::to_string(i) + " repeats a program");
            seen[static_cast<std::size_t>(k)] = static_cast<int>(i);
        }
}

struct MechanismConfig {
    std::vector<int> capacities; ///< index k-1 holds program k's seats
    std::uint64_t lottery_seed = 0;
    /// When false every program admits independently and applicants may hold several
    /// offers; experimental.
    bool mutually_exclusive = true;
};

/// Program-side priority; larger is better.
struct Priority {
    int merit = 0;
    std::uint64_t draw = 0;
    auto operator<=>(const Priority&) const = default;
};

/// Lottery number of applicant i at program k.
inline std::uint64_t lottery_draw(std::uint64_t seed, std::size_t applicant, int program)
{
    return derive_seed(seed, (static_cast<std::uint64_t>(applicant) << 16) | static_cast<std::uint64_t>(program));
}

struct Cutoff {
    int admitted = 0;
    bool oversubscribed = false; ///< some applicant ranking the program was rejected
    bool filled = false;         ///< at least one admit, so merit/draw are meaningful
    int merit = 0;               ///< merit bracket of the last admit
    std::uint64_t draw = 0;      ///< lottery draw of the last admit
};

struct PivotalGroup {
    int program = 0;
    int merit = 0;
    std::vector<int> members; ///< best lottery draw first (rank 1)
    std::vector<double> luck; ///< aligned with members
};

struct AllocationResult {
    std::vector<int> assignment;              ///< program id or 0
    std::vector<std::vector<int>> admissions; ///< non-exclusive mode only
    std::vector<Cutoff> cutoffs;              ///< index k-1
    std::vector<PivotalGroup> pivotal_groups;
    std::uint64_t lottery_seed = 0;
};

/// L = 1 - rank / (n + 1) for ranks 1..n (best draw first).
inline std::vector<double> luck_variable(std::size_t group_size)
{
    std::vector<double> luck(group_size);
    const double denom = static_cast<double>(group_size) + 1.0;
    for (std::size_t r = 0; r < group_size; ++r)
        luck[r] = static_cast<double>(group_size - r) / denom; // 1 - (r + 1) / denom, rounded once
    return luck;
}

inline std::vector<double> luck_variable(const PivotalGroup& group) { return luck_variable(group.members.size()); }

namespace detail {

inline bool rejected_by(const Population& pop, const AllocationResult& res, std::size_t i, int program,
                        bool exclusive)
{
    const auto& prefs = pop.prefs[i];
    if (std::find(prefs.begin(), prefs.end(), program) == prefs.end())
        return false;
    if (!exclusive) {
        const auto& adm = res.admissions[i];
        return std::find(adm.begin(), adm.end(), program) == adm.end();
    }
    for (int k : prefs) {
        if (k == res.assignment[i])
            return false;
        if (k == program)
            return true;
    }
    return false;
}

inline void fill_cutoffs(const Population& pop, const MechanismConfig& cfg, AllocationResult& res)
{
    const int K = pop.programs;
    res.cutoffs.assign(static_cast<std::size_t>(K), Cutoff{});
    auto admit = [&](std::size_t i, int k) {
        auto& c = res.cutoffs[static_cast<std::size_t>(k - 1)];
        const Priority p{pop.merit[i], lottery_draw(cfg.lottery_seed, i, k)};
        if (!c.filled || p < Priority{c.merit, c.draw}) {
            c.merit = p.merit;
            c.draw = p.draw;
        }
        c.filled = true;
        ++c.admitted;
    };
    for (std::size_t i = 0; i < pop.size(); ++i) {
        if (cfg.mutually_exclusive) {
            if (res.assignment[i] > 0)
                admit(i, res.assignment[i]);
        } else {
            for (int k : res.admissions[i])
                admit(i, k);
        }
    }
    for (std::size_t i = 0; i < pop.size(); ++i) {
        const auto& prefs = pop.prefs[i];
        if (cfg.mutually_exclusive) {
            for (int k : prefs) {
                if (k == res.assignment[i])
                    break;
                res.cutoffs[static_cast<std::size_t>(k - 1)].oversubscribed = true;
            }
        } else {
            for (int k : prefs)
                if (std::find(res.admissions[i].begin(), res.admissions[i].end(), k) == res.admissions[i].end())
                    res.cutoffs[static_cast<std::size_t>(k - 1)].oversubscribed = true;
        }
    }
}

inline void deferred_acceptance(const Population& pop, const MechanismConfig& cfg, AllocationResult& res)
{
    using Held = std::pair<Priority, int>;
    const int K = pop.programs;
    std::vector<std::priority_queue<Held, std::vector<Held>, std::greater<>>> held(static_cast<std::size_t>(K));
    std::vector<std::size_t> next(pop.size(), 0);
    std::vector<int> free;
    free.reserve(pop.size());
    for (std::size_t i = pop.size(); i-- > 0;)
        free.push_back(static_cast<int>(i));

    while (!free.empty()) {
        const int i = free.back();
        free.pop_back();
        const auto& prefs = pop.prefs[static_cast<std::size_t>(i)];
        auto& pos = next[static_cast<std::size_t>(i)];
        if (pos >= prefs.size())
            continue;
        const int k = prefs[pos++];
        auto& queue = held[static_cast<std::size_t>(k - 1)];
        const int cap = cfg.capacities[static_cast<std::size_t>(k - 1)];
        queue.emplace(Priority{pop.merit[static_cast<std::size_t>(i)],
                               lottery_draw(cfg.lottery_seed, static_cast<std::size_t>(i), k)},
                      i);
        if (static_cast<int>(queue.size()) > cap) {
            free.push_back(queue.top().second);
            queue.pop();
        }
    }

    res.assignment.assign(pop.size(), 0);
    for (int k = 1; k <= K; ++k) {
        auto& queue = held[static_cast<std::size_t>(k - 1)];
        while (!queue.empty()) {
            res.assignment[static_cast<std::size_t>(queue.top().second)] = k;
            queue.pop();
        }
    }
}

/// Independent per-program admission: each program takes its top-capacity listers.
inline void independent_admission(const Population& pop, const MechanismConfig& cfg, AllocationResult& res)
{
    const int K = pop.programs;
    std::vector<std::vector<std::pair<Priority, int>>> listers(static_cast<std::size_t>(K));
    for (std::size_t i = 0; i < pop.size(); ++i)
        for (int k : pop.prefs[i])
            listers[static_cast<std::size_t>(k - 1)].emplace_back(
                Priority{pop.merit[i], lottery_draw(cfg.lottery_seed, i, k)}, static_cast<int>(i));
    res.admissions.assign(pop.size(), {});
    for (int k = 1; k <= K; ++k) {
        auto& l = listers[static_cast<std::size_t>(k - 1)];
        std::sort(l.begin(), l.end(), std::greater<>());
        const auto cap = static_cast<std::size_t>(cfg.capacities[static_cast<std::size_t>(k - 1)]);
        for (std::size_t r = 0; r < std::min(cap, l.size()); ++r)
            res.admissions[static_cast<std::size_t>(l[r].second)].push_back(k);
    }
    res.assignment.assign(pop.size(), 0);
    for (std::size_t i = 0; i < pop.size(); ++i)
        for (int k : pop.prefs[i])
            if (std::find(res.admissions[i].begin(), res.admissions[i].end(), k) != res.admissions[i].end()) {
                res.assignment[i] = k;
                break;
            }
}

} // namespace detail

/// For each oversubscribed program: the applicants ranking it whose merit equals the
/// cutoff bracket, ordered by lottery draw, with their luck values.
inline std::vector<PivotalGroup> identify_pivotal_groups(const Population& pop, const AllocationResult& res)
{
    std::vector<PivotalGroup> groups;
    for (int k = 1; k <= pop.programs; ++k) {
        const auto& c = res.cutoffs[static_cast<std::size_t>(k - 1)];
        if (!c.oversubscribed || !c.filled)
            continue;
        std::vector<std::pair<std::uint64_t, int>> members;
        for (std::size_t i = 0; i < pop.size(); ++i) {
            if (pop.merit[i] != c.merit)
                continue;
            const auto& prefs = pop.prefs[i];
            if (std::find(prefs.begin(), prefs.end(), k) != prefs.end())
                members.emplace_back(lottery_draw(res.lottery_seed, i, k), static_cast<int>(i));
        }
        std::sort(members.begin(), members.end(), std::greater<>());
        PivotalGroup g;
        g.program = k;
        g.merit = c.merit;
        for (const auto& m : members)
            g.members.push_back(m.second);
        g.luck = luck_variable(g.members.size());
        groups.push_back(std::move(g));
    }
    return groups;
}

struct ClearingOptions {
    bool pivotal_groups = true;
};

inline AllocationResult run_clearing(const Population& pop, const MechanismConfig& cfg,
                                     const ClearingOptions& opts = {})
{
    if (static_cast<int>(cfg.capacities.size()) != pop.programs)
        detail::fail(ErrorKind::data, "mechanism.InvalidConfig", "one capacity per program required");
    for (int c : cfg.capacities)
        if (c < 1)
            detail::fail(ErrorKind::data, "mechanism.InvalidConfig", "capacities must be at least 1");
    AllocationResult res;
    res.lottery_seed = cfg.lottery_seed;
    if (cfg.mutually_exclusive)
        detail::deferred_acceptance(pop, cfg, res);
    else
        detail::independent_admission(pop, cfg, res);
    detail::fill_cutoffs(pop, cfg, res);
    if (opts.pivotal_groups)
        res.pivotal_groups = identify_pivotal_groups(pop, res);
    return res;
}

/// Seats taken per program (index k-1).
inline std::vector<int> enrollment(const AllocationResult& res, int programs)
{
    std::vector<int> count(static_cast<std::size_t>(programs), 0);
    if (!res.admissions.empty()) {
        for (const auto& adm : res.admissions)
            for (int k : adm)
                ++count[static_cast<std::size_t>(k - 1)];
    } else {
        for (int a : res.assignment)
            if (a > 0)
                ++count[static_cast<std::size_t>(a - 1)];
    }
    return count;
}

/// Exhaustive check over (applicant, program) pairs: an applicant who prefers k to
/// their assignment must have lower priority than every admit of a full program k.
/// Returns the number of blocking pairs and capacity violations.
inline std::size_t count_instabilities(const Population& pop, const MechanismConfig& cfg,
                                       const AllocationResult& res)
{
    const int K = pop.programs;
    std::vector<int> count = enrollment(res, K);
    std::size_t bad = 0;
    for (int k = 1; k <= K; ++k)
        if (count[static_cast<std::size_t>(k - 1)] > cfg.capacities[static_cast<std::size_t>(k - 1)])
            ++bad;
    for (std::size_t i = 0; i < pop.size(); ++i) {
        const Priority mine_base{pop.merit[i], 0};
        for (int k : pop.prefs[i]) {
            if (k == res.assignment[i])
                break;
            const auto& c = res.cutoffs[static_cast<std::size_t>(k - 1)];
            const Priority mine{mine_base.merit, lottery_draw(cfg.lottery_seed, i, k)};
            const bool full = count[static_cast<std::size_t>(k - 1)] >= cfg.capacities[static_cast<std::size_t>(k - 1)];
            if (!full || (c.filled && Priority{c.merit, c.draw} < mine))
                ++bad;
        }
    }
    return bad;
}

// ---------------------------------------------------------------------------
// IV dataset simulation and the brute-force slot-expansion oracle

namespace detail {

struct ReplicationRecords {
    std::vector<int> applicant;
    std::vector<int> assignment;
    std::vector<std::vector<std::pair<int, double>>> memberships; ///< (program, luck)
};

inline ReplicationRecords pivotal_records(const Population& pop, const AllocationResult& res)
{
    std::map<int, std::vector<std::pair<int, double>>> by_applicant;
    for (const auto& g : res.pivotal_groups)
        for (std::size_t r = 0; r < g.members.size(); ++r)
            by_applicant[g.members[r]].emplace_back(g.program, g.luck[r]);
    ReplicationRecords rec;
    for (auto& [i, groups] : by_applicant) {
        // primary membership first: order by the applicant's own preference ranking
        const auto& prefs = pop.prefs[static_cast<std::size_t>(i)];
        std::sort(groups.begin(), groups.end(), [&](const auto& a, const auto& b) {
            return std::find(prefs.begin(), prefs.end(), a.first) < std::find(prefs.begin(), prefs.end(), b.first);
        });
        rec.applicant.push_back(i);
        rec.assignment.push_back(res.assignment[static_cast<std::size_t>(i)]);
        rec.memberships.push_back(std::move(groups));
    }
    return rec;
}

} // namespace detail

inline MechanismConfig replication_config(const MechanismConfig& cfg, std::uint64_t master_seed, std::size_t rep)
{
    MechanismConfig out = cfg;
    out.lottery_seed = derive_seed(master_seed, rep);
    return out;
}

/// Stacks pivotal-group members over `reps` independent lottery draws.
/// Treatments are the programs that had a pivotal group in some replication;
/// other programs act as part of the outside option. Z_ij = L_i for members of
/// program j's group; controls are a constant plus membership dummies (the first
/// treatment's dummy is dropped); clusters are (replication, primary group).
inline Dataset simulate_iv_dataset(const Population& pop, const MechanismConfig& cfg, int reps,
                                   std::uint64_t master_seed, unsigned threads = 0)
{
    validate(pop);
    if (reps < 1)
        detail::fail(ErrorKind::usage, "mechanism.InvalidReplications", "need at least one replication");
    std::vector<detail::ReplicationRecords> recs(static_cast<std::size_t>(reps));
    parallel_for(
        static_cast<std::size_t>(reps),
        [&](std::size_t r) {
            const auto res = run_clearing(pop, replication_config(cfg, master_seed, r));
            recs[r] = detail::pivotal_records(pop, res);
        },
        threads);

    std::set<int> programs;
    std::size_t rows = 0;
    for (const auto& rec : recs) {
        rows += rec.applicant.size();
        for (const auto& m : rec.memberships)
            for (const auto& [k, l] : m)
                programs.insert(k);
    }
    if (programs.empty())
        detail::fail(ErrorKind::data, "mechanism.NoPivotalVariation", "no program was oversubscribed in any replication");

    const std::vector<int> treat(programs.begin(), programs.end());
    std::vector<int> column(static_cast<std::size_t>(pop.programs) + 1, -1);
    for (std::size_t j = 0; j < treat.size(); ++j)
        column[static_cast<std::size_t>(treat[j])] = static_cast<int>(j);
    const auto K = static_cast<Index>(treat.size());
    const auto N = static_cast<Index>(rows);

    Dataset d;
    d.y.resize(N);
    d.A = MatrixXd::Zero(N, K);
    d.Z = MatrixXd::Zero(N, K);
    d.X = MatrixXd::Zero(N, K);
    d.X.col(0).setOnes();
    d.cluster.reserve(rows);
    if (!pop.group.empty())
        d.group_label.emplace().reserve(rows);
    if (pop.covariates.size() > 0) {
        d.aux.resize(N, pop.covariates.cols());
        d.aux_names = pop.covariate_names;
    }
    for (int k : treat)
        d.treatment_names.push_back(std::to_string(k));
    d.control_names.push_back("const");
    for (std::size_t j = 1; j < treat.size(); ++j)
        d.control_names.push_back("applied_" + std::to_string(treat[j]));

    Index row = 0;
    for (std::size_t r = 0; r < recs.size(); ++r) {
        const auto& rec = recs[r];
        for (std::size_t e = 0; e < rec.applicant.size(); ++e, ++row) {
            const auto i = static_cast<std::size_t>(rec.applicant[e]);
            const int a = rec.assignment[e];
            d.y(row) = pop.po(static_cast<Index>(i), a);
            if (a > 0 && column[static_cast<std::size_t>(a)] >= 0)
                d.A(row, column[static_cast<std::size_t>(a)]) = 1.0;
            for (const auto& [k, l] : rec.memberships[e]) {
                const int c = column[static_cast<std::size_t>(k)];
                d.Z(row, c) = l;
                if (c > 0)
                    d.X(row, c) = 1.0;
            }
            d.cluster.push_back("r" + std::to_string(r) + "p" + std::to_string(rec.memberships[e].front().first));
            if (!pop.group.empty())
                d.group_label->push_back(pop.group[i]);
            if (pop.covariates.size() > 0)
                d.aux.row(row) = pop.covariates.row(static_cast<Index>(i));
        }
    }
    return d;
}

/// One displacement in a vacancy chain triggered by adding a seat.
struct CascadeEvent {
    int replication = 0;
    int expanded = 0; ///< program that received the extra seat
    int round = 0;    ///< position in the chain, 0 = entrant to the expanded program
    int from = 0;     ///< program vacated (0 = outside option)
    int to = 0;       ///< program entered
    int applicant = 0;
};

struct OracleEstimate {
    int program = 0;
    double effect = 0.0; ///< mean change in total outcome per added seat
    double se = 0.0;     ///< Monte Carlo standard error
    bool undersubscribed = false;
    int oversubscribed_reps = 0;
    int reps = 0;
    /// Largest |change in any program's enrollment| and total enrollment change
    /// range across replications (conservation diagnostics).
    int max_program_change = 0;
    int min_total_change = 0;
    int max_total_change = 0;
};

namespace detail {

inline std::vector<CascadeEvent> vacancy_chain(const std::vector<int>& before, const std::vector<int>& after,
                                               int replication, int expanded)
{
    std::map<int, std::vector<int>> entrants; // program entered -> applicants
    std::vector<int> movers;
    for (std::size_t i = 0; i < before.size(); ++i)
        if (before[i] != after[i]) {
            movers.push_back(static_cast<int>(i));
            entrants[after[i]].push_back(static_cast<int>(i));
        }
    std::vector<CascadeEvent> chain;
    std::vector<char> used(before.size(), 0);
    int program = expanded;
    int round = 0;
    while (program != 0) {
        auto it = entrants.find(program);
        if (it == entrants.end() || it->second.empty())
            break;
        const int i = it->second.back();
        it->second.pop_back();
        used[static_cast<std::size_t>(i)] = 1;
        chain.push_back({replication, expanded, round++, before[static_cast<std::size_t>(i)], program, i});
        program = before[static_cast<std::size_t>(i)];
    }
    for (int i : movers)
        if (!used[static_cast<std::size_t>(i)])
            chain.push_back({replication, expanded, round++, before[static_cast<std::size_t>(i)],
                             after[static_cast<std::size_t>(i)], i});
    return chain;
}

} // namespace detail

/// Brute-force total effect of one extra seat in each listed program: for each
/// replication's lottery, clear the market at Q and Q + e_k and difference the
/// population's total outcome.
inline std::vector<OracleEstimate> slot_expansion_oracle_all(const Population& pop, const MechanismConfig& cfg,
                                                             const std::vector<int>& programs, int reps,
                                                             std::uint64_t master_seed, unsigned threads = 0,
                                                             std::vector<CascadeEvent>* events = nullptr)
{
    validate(pop);
    if (reps < 1)
        detail::fail(ErrorKind::usage, "mechanism.InvalidReplications", "need at least one replication");
    for (int k : programs)
        if (k < 1 || k > pop.programs)
            detail::fail(ErrorKind::usage, "mechanism.UnknownProgram", "unknown program id " + std::to_string(k));

    const std::size_t P = programs.size();
    struct Rep {
        std::vector<double> diff;
        std::vector<char> over;
        std::vector<int> max_change, total_change;
        std::vector<CascadeEvent> events;
    };
    std::vector<Rep> out(static_cast<std::size_t>(reps));
    const ClearingOptions no_groups{false};
    parallel_for(
        static_cast<std::size_t>(reps),
        [&](std::size_t r) {
            const auto base_cfg = replication_config(cfg, master_seed, r);
            const auto base = run_clearing(pop, base_cfg, no_groups);
            const auto base_count = enrollment(base, pop.programs);
            Rep rep;
            for (int k : programs) {
                auto cfg_k = base_cfg;
                ++cfg_k.capacities[static_cast<std::size_t>(k - 1)];
                const auto expanded = run_clearing(pop, cfg_k, no_groups);
                double diff = 0.0;
                for (std::size_t i = 0; i < pop.size(); ++i)
                    if (expanded.assignment[i] != base.assignment[i])
                        diff += pop.po(static_cast<Index>(i), expanded.assignment[i]) -
                                pop.po(static_cast<Index>(i), base.assignment[i]);
                const auto count = enrollment(expanded, pop.programs);
                int max_change = 0, total = 0;
                for (std::size_t j = 0; j < count.size(); ++j) {
                    max_change = std::max(max_change, std::abs(count[j] - base_count[j]));
                    total += count[j] - base_count[j];
                }
                rep.diff.push_back(diff);
                rep.over.push_back(base.cutoffs[static_cast<std::size_t>(k - 1)].oversubscribed ? 1 : 0);
                rep.max_change.push_back(max_change);
                rep.total_change.push_back(total);
                if (events) {
                    auto chain = detail::vacancy_chain(base.assignment, expanded.assignment, static_cast<int>(r), k);
                    rep.events.insert(rep.events.end(), chain.begin(), chain.end());
                }
            }
            out[r] = std::move(rep);
        },
        threads);

    std::vector<OracleEstimate> est(P);
    for (std::size_t p = 0; p < P; ++p) {
        auto& e = est[p];
        e.program = programs[p];
        e.reps = reps;
        e.min_total_change = std::numeric_limits<int>::max();
        e.max_total_change = std::numeric_limits<int>::min();
        double sum = 0.0;
        for (const auto& rep : out) {
            sum += rep.diff[p];
            e.oversubscribed_reps += rep.over[p];
            e.max_program_change = std::max(e.max_program_change, rep.max_change[p]);
            e.min_total_change = std::min(e.min_total_change, rep.total_change[p]);
            e.max_total_change = std::max(e.max_total_change, rep.total_change[p]);
        }
        e.undersubscribed = e.oversubscribed_reps == 0;
        if (e.undersubscribed)
            continue;
        e.effect = sum / reps;
        double ss = 0.0;
        for (const auto& rep : out)
            ss += (rep.diff[p] - e.effect) * (rep.diff[p] - e.effect);
        e.se = reps > 1 ? std::sqrt(ss / (reps - 1.0) / reps) : 0.0;
    }
    if (events)
        for (auto& rep : out)
            events->insert(events->end(), rep.events.begin(), rep.events.end());
    return est;
}

inline OracleEstimate slot_expansion_oracle(const Population& pop, const MechanismConfig& cfg, int program, int reps,
                                            std::uint64_t master_seed, unsigned threads = 0,
                                            std::vector<CascadeEvent>* events = nullptr)
{
    return slot_expansion_oracle_all(pop, cfg, {program}, reps, master_seed, threads, events).front();
}

// ---------------------------------------------------------------------------
// Balance

struct BalanceRow {
    std::string name;
    double coef = 0.0;
    double se = 0.0;
};

struct BalanceResult {
    std::vector<BalanceRow> rows;
    double wald = 0.0; ///< joint Wald statistic over non-degenerate covariates
    int df = 0;
    double f_stat = 0.0;
    double p_value = 1.0; ///< from F(df, G - 1)
    int clusters = 0;
};

/// Regresses each covariate on the pooled luck variable (row sum of Z) with a
/// constant, clustering by the dataset's cluster ids, and tests all slopes jointly.
inline BalanceResult balance_check(const Dataset& data, const MatrixXd& covariates,
                                   const std::vector<std::string>& names)
{
    if (covariates.rows() != data.n())
        detail::fail(ErrorKind::data, "mechanism.LengthMismatch", "covariates must have one row per observation");
    const auto clusters = cluster_index(data.cluster);
    if (clusters.count < 2)
        detail::fail(ErrorKind::data, "estimator.TooFewClusters", "balance check needs at least 2 clusters");
    const Index n = data.n();
    const Index c = covariates.cols();
    const VectorXd luck = data.Z.rowwise().sum();
    const VectorXd lc = luck.array() - luck.mean();
    const double sll = lc.squaredNorm();
    if (!(sll > 0.0))
        detail::fail(ErrorKind::data, "mechanism.NoPivotalVariation", "luck variable has no variation");

    BalanceResult out;
    out.clusters = clusters.count;
    VectorXd b(c);
    MatrixXd psi(n, c);
    for (Index j = 0; j < c; ++j) {
        const VectorXd x = covariates.col(j);
        const VectorXd xc = x.array() - x.mean();
        b(j) = lc.dot(xc) / sll;
        const VectorXd resid = xc - b(j) * lc;
        psi.col(j) = lc.cwiseProduct(resid) / sll;
    }
    const double g = clusters.count;
    const double factor = g / (g - 1.0) * (static_cast<double>(n) - 1.0) / (static_cast<double>(n) - 2.0);
    const MatrixXd V = factor * detail::cluster_meat(psi, clusters);

    std::vector<Index> keep;
    for (Index j = 0; j < c; ++j) {
        const double se = std::sqrt(std::max(0.0, V(j, j)));
        out.rows.push_back({j < static_cast<Index>(names.size()) ? names[static_cast<std::size_t>(j)]
                                                                  : "c" + std::to_string(j + 1),
                            b(j), se});
        if (se > 1e-12 * std::max(1.0, std::abs(b(j))))
            keep.push_back(j);
    }
    if (!keep.empty()) {
        const auto m = static_cast<Index>(keep.size());
        MatrixXd Vk(m, m);
        VectorXd bk(m);
        for (Index r = 0; r < m; ++r) {
            bk(r) = b(keep[static_cast<std::size_t>(r)]);
            for (Index s = 0; s < m; ++s)
                Vk(r, s) = V(keep[static_cast<std::size_t>(r)], keep[static_cast<std::size_t>(s)]);
        }
        Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(Vk);
        out.df = static_cast<int>(cod.rank());
        out.wald = bk.dot(cod.solve(bk));
    }
    if (out.df > 0 && clusters.count > 1) {
        out.f_stat = out.wald / out.df;
        const boost::math::fisher_f dist(out.df, g - 1.0);
        out.p_value = boost::math::cdf(boost::math::complement(dist, std::max(0.0, out.f_stat)));
    }
    return out;
}

} // namespace cascade_iv

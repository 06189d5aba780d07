#pragma once

// Tabular I/O. CSV files use '\n' line endings and '.' decimals, start with one
// "# cascade_iv ..." provenance comment, and write doubles in shortest
// round-trip form. Lines beginning with '#' are skipped on input.

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "cascade_iv/bootstrap.hpp"
#include "cascade_iv/cascade.hpp"
#include "cascade_iv/dataset.hpp"
#include "cascade_iv/error.hpp"
#include "cascade_iv/estimate_set.hpp"
#include "cascade_iv/mechanism.hpp"
#include "cascade_iv/synth.hpp"

namespace cascade_iv {

inline constexpr std::string_view version = "1.0.0";

namespace io {

using nlohmann::json;

inline std::string format_double(double v)
{
    if (std::isnan(v))
        return "nan";
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

inline std::optional<double> parse_double(std::string_view s)
{
    while (!s.empty() && s.front() == ' ')
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r'))
        s.remove_suffix(1);
    if (s == "nan" || s == "NaN" || s == "NA")
        return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf")
        return std::numeric_limits<double>::infinity();
    if (s == "-inf")
        return -std::numeric_limits<double>::infinity();
    if (!s.empty() && s.front() == '+')
        s.remove_prefix(1);
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size())
        return std::nullopt;
    return v;
}

/// Provenance line written at the top of every CSV.
struct Provenance {
    std::string command;
    std::optional<std::uint64_t> seed;
};

inline std::string provenance_line(const Provenance& p)
{
    std::string line = "# cascade_iv " + std::string(version) + " command=" + p.command;
    if (p.seed)
        line += " seed=" + std::to_string(*p.seed);
    return line + "\n";
}

inline std::string quote_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos)
        return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"')
            out += '"';
        out += c;
    }
    return out + "\"";
}

/// Splits one CSV record; double quotes escape commas and quotes.
inline std::vector<std::string> split_csv(std::string_view line)
{
    std::vector<std::string> out(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                out.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                out.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.emplace_back();
        } else if (c != '\r') {
            out.back() += c;
        }
    }
    return out;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;
    std::string source;

    std::optional<std::size_t> column(const std::string& name) const
    {
        for (std::size_t c = 0; c < header.size(); ++c)
            if (header[c] == name)
                return c;
        return std::nullopt;
    }
};

inline CsvTable read_csv(std::istream& in, const std::string& source)
{
    CsvTable t;
    t.source = source;
    std::string line;
    std::size_t number = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty() || line == "\r" || line.front() == '#')
            continue;
        auto fields = split_csv(line);
        if (!have_header) {
            t.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != t.header.size())
            detail::fail(ErrorKind::data, "io.SchemaError",
                         source + ":" + std::to_string(number) + ": expected " + std::to_string(t.header.size()) +
                             " fields, found " + std::to_string(fields.size()),
                         {{"line", number}, {"expected", t.header.size()}, {"found", fields.size()}});
        t.rows.push_back(std::move(fields));
        t.line_numbers.push_back(number);
    }
    if (!have_header)
        detail::fail(ErrorKind::data, "io.SchemaError", source + ": missing header row");
    return t;
}

inline CsvTable read_csv_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        detail::fail(ErrorKind::data, "io.FileError", "cannot open " + path, {{"path", path}});
    return read_csv(in, path);
}

inline double number_at(const CsvTable& t, std::size_t row, std::size_t col)
{
    const auto v = parse_double(t.rows[row][col]);
    if (!v)
        detail::fail(ErrorKind::data, "io.ParseError",
                     t.source + ":" + std::to_string(t.line_numbers[row]) + ": column '" + t.header[col] +
                         "' is not a number: '" + t.rows[row][col] + "'",
                     {{"line", t.line_numbers[row]}, {"column", t.header[col]}});
    return *v;
}

inline std::ofstream open_output(const std::string& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        detail::fail(ErrorKind::data, "io.FileError", "cannot write " + path, {{"path", path}});
    return out;
}

// ---------------------------------------------------------------------------
// Dataset

inline void write_dataset_csv(std::ostream& out, const Dataset& d, const Provenance& p)
{
    const auto tnames = d.treatment_names.empty() ? default_names(d.k()) : d.treatment_names;
    std::vector<std::string> cnames = d.control_names;
    if (static_cast<Index>(cnames.size()) != d.p()) {
        cnames.clear();
        for (Index j = 0; j < d.p(); ++j)
            cnames.push_back(is_constant_column(d.X, j) ? "const" : std::to_string(j + 1));
    }
    out << provenance_line(p);
    out << "y";
    for (const auto& n : tnames)
        out << ",a_" << n;
    for (const auto& n : tnames)
        out << ",z_" << n;
    for (const auto& n : cnames)
        out << ",x_" << n;
    out << ",cluster";
    if (d.group_label)
        out << ",group";
    for (const auto& n : d.aux_names)
        out << ",w_" << n;
    out << "\n";
    for (Index i = 0; i < d.n(); ++i) {
        out << format_double(d.y(i));
        for (Index j = 0; j < d.k(); ++j)
            out << ',' << format_double(d.A(i, j));
        for (Index j = 0; j < d.k(); ++j)
            out << ',' << format_double(d.Z(i, j));
        for (Index j = 0; j < d.p(); ++j)
            out << ',' << format_double(d.X(i, j));
        out << ',' << quote_field(d.cluster[static_cast<std::size_t>(i)]);
        if (d.group_label)
            out << ',' << quote_field((*d.group_label)[static_cast<std::size_t>(i)]);
        for (Index j = 0; j < d.aux.cols(); ++j)
            out << ',' << format_double(d.aux(i, j));
        out << "\n";
    }
}

inline void write_dataset_csv(const std::string& path, const Dataset& d, const Provenance& p)
{
    auto out = open_output(path);
    write_dataset_csv(out, d, p);
}

struct LoadOptions {
    bool require_binary_treatments = true;
    std::string group_column = "group";
};

inline Dataset dataset_from_table(const CsvTable& t, const LoadOptions& opts = {})
{
    auto schema = [&](const std::string& msg, const std::string& column) {
        detail::fail(ErrorKind::data, "io.SchemaError", t.source + ": " + msg, {{"column", column}});
    };
    const auto ycol = t.column("y");
    if (!ycol)
        schema("missing column 'y'", "y");
    const auto ccol = t.column("cluster");
    if (!ccol)
        schema("missing column 'cluster'", "cluster");
    const auto gcol = t.column(opts.group_column);

    std::vector<std::size_t> acols, zcols, xcols, wcols;
    Dataset d;
    for (std::size_t c = 0; c < t.header.size(); ++c) {
        const auto& h = t.header[c];
        if (h.rfind("a_", 0) == 0) {
            acols.push_back(c);
            d.treatment_names.push_back(h.substr(2));
        } else if (h.rfind("x_", 0) == 0) {
            xcols.push_back(c);
            d.control_names.push_back(h.substr(2));
        } else if (h.rfind("w_", 0) == 0) {
            wcols.push_back(c);
            d.aux_names.push_back(h.substr(2));
        }
    }
    if (acols.empty())
        schema("no treatment columns (a_*)", "a_1");
    for (const auto& name : d.treatment_names) {
        const auto z = t.column("z_" + name);
        if (!z)
            schema("missing instrument column 'z_" + name + "'", "z_" + name);
        zcols.push_back(*z);
    }
    std::size_t z_total = 0;
    for (const auto& h : t.header)
        z_total += h.rfind("z_", 0) == 0 ? 1 : 0;
    if (z_total != zcols.size())
        schema("instrument columns do not match treatment columns", "z_*");
    if (xcols.empty())
        schema("no control columns (x_*); a constant column is required", "x_const");

    const auto N = static_cast<Index>(t.rows.size());
    const auto K = static_cast<Index>(acols.size());
    d.y.resize(N);
    d.A.resize(N, K);
    d.Z.resize(N, K);
    d.X.resize(N, static_cast<Index>(xcols.size()));
    d.aux.resize(N, static_cast<Index>(wcols.size()));
    d.cluster.reserve(t.rows.size());
    if (gcol)
        d.group_label.emplace().reserve(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto i = static_cast<Index>(r);
        d.y(i) = number_at(t, r, *ycol);
        for (Index j = 0; j < K; ++j) {
            d.A(i, j) = number_at(t, r, acols[static_cast<std::size_t>(j)]);
            d.Z(i, j) = number_at(t, r, zcols[static_cast<std::size_t>(j)]);
        }
        for (std::size_t j = 0; j < xcols.size(); ++j)
            d.X(i, static_cast<Index>(j)) = number_at(t, r, xcols[j]);
        for (std::size_t j = 0; j < wcols.size(); ++j)
            d.aux(i, static_cast<Index>(j)) = number_at(t, r, wcols[j]);
        d.cluster.push_back(t.rows[r][*ccol]);
        if (gcol)
            d.group_label->push_back(t.rows[r][*gcol]);
    }
    validate(d, opts.require_binary_treatments);
    return d;
}

inline Dataset load_dataset_csv(std::istream& in, const std::string& source = "<stream>",
                                const LoadOptions& opts = {})
{
    return dataset_from_table(read_csv(in, source), opts);
}

inline Dataset load_dataset_csv(const std::string& path, const LoadOptions& opts = {})
{
    return dataset_from_table(read_csv_file(path), opts);
}

// ---------------------------------------------------------------------------
// Estimates

/// v(k), or NaN when the vector was not filled.
inline double at(const VectorXd& v, Index k)
{
    return k < v.size() ? v(k) : std::numeric_limits<double>::quiet_NaN();
}

inline void write_estimates_csv(std::ostream& out, const EstimateSet& e, const Provenance& p,
                                const BootstrapResult* boot = nullptr)
{
    out << provenance_line(p);
    out << "treatment,beta,rf,wald,T,delta,se_beta,se_rf,se_wald,se_delta,pi_own,own_f";
    if (boot)
        out << ",boot_se,boot_ci_lo,boot_ci_hi";
    out << "\n";
    for (Index k = 0; k < e.beta.size(); ++k) {
        const auto ks = static_cast<std::size_t>(k);
        out << quote_field(ks < e.names.size() ? e.names[ks] : std::to_string(k + 1));
        for (double v : {at(e.beta, k), at(e.rf, k), at(e.wald, k), at(e.cascade_T, k), at(e.cascade_delta, k),
                         at(e.se_beta, k), at(e.se_rf, k), at(e.se_wald, k), at(e.se_delta, k),
                         at(e.first_stage.diag, k), at(e.first_stage.own_f, k)})
            out << ',' << format_double(v);
        if (boot && k < boot->se.size())
            out << ',' << format_double(boot->se(k)) << ',' << format_double(boot->ci_lo(k)) << ','
                << format_double(boot->ci_hi(k));
        out << "\n";
    }
}

/// Right-aligned fixed-precision table for terminal output.
inline void print_table(std::ostream& out, const std::vector<std::string>& header,
                        const std::vector<std::vector<std::string>>& rows)
{
    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
        width[c] = header[c].size();
        for (const auto& r : rows)
            width[c] = std::max(width[c], r[c].size());
    }
    auto line = [&](const std::vector<std::string>& r) {
        for (std::size_t c = 0; c < r.size(); ++c)
            out << (c ? "  " : "") << std::setw(static_cast<int>(width[c])) << r[c];
        out << "\n";
    };
    line(header);
    for (const auto& r : rows)
        line(r);
}

inline std::string fixed(double v, int digits = 5)
{
    if (!std::isfinite(v))
        return format_double(v);
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

inline void print_estimates(std::ostream& out, const EstimateSet& e)
{
    std::vector<std::vector<std::string>> rows;
    for (Index k = 0; k < e.beta.size(); ++k)
        rows.push_back({e.names[static_cast<std::size_t>(k)], fixed(at(e.beta, k)), fixed(at(e.se_beta, k)),
                        fixed(at(e.wald, k)), fixed(at(e.se_wald, k)), fixed(at(e.cascade_delta, k)),
                        fixed(at(e.se_delta, k)), fixed(at(e.first_stage.diag, k)),
                        fixed(at(e.first_stage.own_f, k), 1)});
    print_table(out, {"treatment", "T=beta", "se", "W", "se", "delta", "se", "pi_kk", "F_own"}, rows);
    out << "N = " << e.n_obs << ", clusters = " << e.n_clusters << "\n";
    for (const auto& w : e.warnings)
        out << "warning: " << w << "\n";
}

// ---------------------------------------------------------------------------
// Populations

/// Columns: id, merit, group, prefs ("2;1"), y_0..y_K, w_*.
inline void write_population_csv(std::ostream& out, const Population& pop, const Provenance& p)
{
    out << provenance_line(p);
    out << "id,merit,group,prefs";
    for (int k = 0; k <= pop.programs; ++k)
        out << ",y_" << k;
    for (const auto& n : pop.covariate_names)
        out << ",w_" << n;
    out << "\n";
    for (std::size_t i = 0; i < pop.size(); ++i) {
        out << i << ',' << pop.merit[i] << ',' << (pop.group.empty() ? "" : quote_field(pop.group[i])) << ',';
        for (std::size_t r = 0; r < pop.prefs[i].size(); ++r)
            out << (r ? ";" : "") << pop.prefs[i][r];
        for (int k = 0; k <= pop.programs; ++k)
            out << ',' << format_double(pop.po(static_cast<Index>(i), k));
        for (Index c = 0; c < pop.covariates.cols(); ++c)
            out << ',' << format_double(pop.covariates(static_cast<Index>(i), c));
        out << "\n";
    }
}

inline Population population_from_table(const CsvTable& t)
{
    auto need = [&](const std::string& name) {
        const auto c = t.column(name);
        if (!c)
            detail::fail(ErrorKind::data, "io.SchemaError", t.source + ": missing column '" + name + "'",
                         {{"column", name}});
        return *c;
    };
    const auto mcol = need("merit");
    const auto pcol = need("prefs");
    const auto gcol = t.column("group");
    std::vector<std::size_t> ycols, wcols;
    Population pop;
    for (int k = 0;; ++k) {
        const auto c = t.column("y_" + std::to_string(k));
        if (!c)
            break;
        ycols.push_back(*c);
    }
    if (ycols.size() < 2)
        detail::fail(ErrorKind::data, "io.SchemaError", t.source + ": need potential outcome columns y_0..y_K",
                     {{"column", "y_0"}});
    for (std::size_t c = 0; c < t.header.size(); ++c)
        if (t.header[c].rfind("w_", 0) == 0) {
            wcols.push_back(c);
            pop.covariate_names.push_back(t.header[c].substr(2));
        }
    pop.programs = static_cast<int>(ycols.size()) - 1;
    const auto N = t.rows.size();
    pop.merit.resize(N);
    pop.prefs.resize(N);
    pop.po.resize(static_cast<Index>(N), pop.programs + 1);
    pop.covariates.resize(static_cast<Index>(N), static_cast<Index>(wcols.size()));
    if (gcol)
        pop.group.resize(N);
    for (std::size_t r = 0; r < N; ++r) {
        const double m = number_at(t, r, mcol);
        if (m != std::floor(m))
            detail::fail(ErrorKind::data, "io.ParseError",
                         t.source + ":" + std::to_string(t.line_numbers[r]) + ": merit must be an integer",
                         {{"line", t.line_numbers[r]}, {"column", "merit"}});
        pop.merit[r] = static_cast<int>(m);
        std::string_view prefs = t.rows[r][pcol];
        while (!prefs.empty()) {
            const auto cut = prefs.find(';');
            const auto v = parse_double(prefs.substr(0, cut));
            if (!v || *v != std::floor(*v))
                detail::fail(ErrorKind::data, "io.ParseError",
                             t.source + ":" + std::to_string(t.line_numbers[r]) + ": bad preference list",
                             {{"line", t.line_numbers[r]}, {"column", "prefs"}});
            pop.prefs[r].push_back(static_cast<int>(*v));
            if (cut == std::string_view::npos)
                break;
            prefs.remove_prefix(cut + 1);
        }
        for (std::size_t k = 0; k < ycols.size(); ++k)
            pop.po(static_cast<Index>(r), static_cast<Index>(k)) = number_at(t, r, ycols[k]);
        for (std::size_t c = 0; c < wcols.size(); ++c)
            pop.covariates(static_cast<Index>(r), static_cast<Index>(c)) = number_at(t, r, wcols[c]);
        if (gcol)
            pop.group[r] = t.rows[r][*gcol];
    }
    validate(pop);
    return pop;
}

// ---------------------------------------------------------------------------
// Event log, traces and reports

inline void write_events_jsonl(std::ostream& out, const std::vector<CascadeEvent>& events)
{
    for (const auto& e : events)
        out << json{{"replication", e.replication}, {"expanded", e.expanded}, {"round", e.round},
                    {"from", e.from}, {"to", e.to}, {"applicant", e.applicant}}
                   .dump()
            << "\n";
}

inline void write_trace_csv(std::ostream& out, const CascadeSolution& sol, const std::vector<std::string>& names,
                            const Provenance& p)
{
    out << provenance_line(p);
    out << "round";
    for (const auto& n : names)
        out << ",increment_" << n;
    for (const auto& n : names)
        out << ",cumulative_" << n;
    out << "\n";
    VectorXd cum = VectorXd::Zero(static_cast<Index>(names.size()));
    for (std::size_t r = 0; r < sol.rounds.size(); ++r) {
        cum += sol.rounds[r];
        out << r;
        for (Index k = 0; k < cum.size(); ++k)
            out << ',' << format_double(sol.rounds[r](k));
        for (Index k = 0; k < cum.size(); ++k)
            out << ',' << format_double(cum(k));
        out << "\n";
    }
}

struct VerifyRow {
    std::string treatment;
    double oracle = 0.0, oracle_se = 0.0;
    double beta = 0.0, beta_se = 0.0;
    double z = 0.0; ///< (oracle - beta) / combined SE
    bool undersubscribed = false;
    bool agree = false;
};

inline void write_verify_csv(std::ostream& out, const std::vector<VerifyRow>& rows, const Provenance& p)
{
    out << provenance_line(p);
    out << "treatment,oracle,oracle_se,beta,beta_se,z,undersubscribed,agree\n";
    for (const auto& r : rows)
        out << quote_field(r.treatment) << ',' << format_double(r.oracle) << ',' << format_double(r.oracle_se) << ','
            << format_double(r.beta) << ',' << format_double(r.beta_se) << ',' << format_double(r.z) << ','
            << (r.undersubscribed ? 1 : 0) << ',' << (r.agree ? 1 : 0) << "\n";
}

inline void write_balance_csv(std::ostream& out, const BalanceResult& b, const Provenance& p)
{
    out << provenance_line(p);
    out << "covariate,coef,se,t\n";
    for (const auto& r : b.rows)
        out << quote_field(r.name) << ',' << format_double(r.coef) << ',' << format_double(r.se) << ','
            << format_double(r.se > 0 ? r.coef / r.se : 0.0) << "\n";
    out << "joint_wald," << format_double(b.wald) << ",df=" << b.df << ",p=" << format_double(b.p_value) << "\n";
}

// ---------------------------------------------------------------------------
// JSON configuration

inline SynthConfig synth_config_from_json(const json& j)
{
    SynthConfig c;
    try {
        c.N = j.value("N", c.N);
        c.K = j.value("K", c.K);
        c.brackets = j.value("brackets", c.brackets);
        c.bracket_weights = j.value("bracket_weights", c.bracket_weights);
        c.selectivity = j.value("selectivity", c.selectivity);
        c.taste_noise = j.value("taste_noise", c.taste_noise);
        c.merit_tilt = j.value("merit_tilt", c.merit_tilt);
        c.outside_utility = j.value("outside_utility", c.outside_utility);
        c.max_list = j.value("max_list", c.max_list);
        c.capacity_share = j.value("capacity_share", c.capacity_share);
        c.base_effects = j.value("base_effects", c.base_effects);
        c.sigma_h = j.value("sigma_h", c.sigma_h);
        c.type_loading = j.value("type_loading", c.type_loading);
        c.idiosyncratic = j.value("idiosyncratic", c.idiosyncratic);
        c.baseline_sd = j.value("baseline_sd", c.baseline_sd);
        c.group_share = j.value("group_share", c.group_share);
        c.group_effects = j.value("group_effects", c.group_effects);
        c.group_taste = j.value("group_taste", c.group_taste);
        c.seed = j.value("seed", c.seed);
        if (j.contains("complier_targets")) {
            const auto& t = j.at("complier_targets");
            ComplierTargets ct;
            ct.p02 = t.value("p02", ct.p02);
            ct.p12 = t.value("p12", ct.p12);
            ct.e20 = t.value("e20", ct.e20);
            ct.e21 = t.value("e21", ct.e21);
            ct.e10 = t.value("e10", ct.e10);
            c.complier_targets = ct;
        }
    } catch (const json::exception& e) {
        detail::fail(ErrorKind::usage, "io.ConfigError", std::string("invalid synth config: ") + e.what());
    }
    validate(c);
    return c;
}

inline json synth_config_to_json(const SynthConfig& c)
{
    json j{{"N", c.N},
           {"K", c.K},
           {"brackets", c.brackets},
           {"bracket_weights", c.bracket_weights},
           {"selectivity", c.selectivity},
           {"taste_noise", c.taste_noise},
           {"merit_tilt", c.merit_tilt},
           {"outside_utility", c.outside_utility},
           {"max_list", c.max_list},
           {"capacity_share", c.capacity_share},
           {"base_effects", c.base_effects},
           {"sigma_h", c.sigma_h},
           {"type_loading", c.type_loading},
           {"idiosyncratic", c.idiosyncratic},
           {"baseline_sd", c.baseline_sd},
           {"group_share", c.group_share},
           {"group_effects", c.group_effects},
           {"group_taste", c.group_taste},
           {"seed", c.seed}};
    if (c.complier_targets) {
        const auto& t = *c.complier_targets;
        j["complier_targets"] = {{"p02", t.p02}, {"p12", t.p12}, {"e20", t.e20}, {"e21", t.e21}, {"e10", t.e10}};
    }
    return j;
}

/// Parameters shared by all commands; flags override values from the JSON file.
struct RunConfig {
    std::optional<std::uint64_t> seed;
    int reps = 200;
    double tol = 1e-10;
    int max_rounds = 1000;
    int bootstrap_reps = 0;
    std::string blocks;
    std::string group_col = "group";
    std::string out = ".";
    std::string data;
    std::string fixture;
    std::string statistic = "beta";
    std::string group;
    std::string scenario = "default";
    unsigned threads = 0;
    SynthConfig synth;
    std::vector<int> capacities; ///< empty: derived from synth
    bool mutually_exclusive = true;

    std::uint64_t require_seed(const std::string& command) const
    {
        if (!seed)
            detail::fail(ErrorKind::usage, "cli.MissingSeed", command + " is stochastic and needs --seed");
        return *seed;
    }
};

inline RunConfig run_config_from_json(const json& j)
{
    RunConfig c;
    try {
        if (j.contains("seed"))
            c.seed = j.at("seed").get<std::uint64_t>();
        c.reps = j.value("reps", c.reps);
        c.tol = j.value("tol", c.tol);
        c.max_rounds = j.value("max_rounds", c.max_rounds);
        c.bootstrap_reps = j.value("bootstrap_reps", c.bootstrap_reps);
        c.blocks = j.value("blocks", c.blocks);
        c.group_col = j.value("group_col", c.group_col);
        c.out = j.value("out", c.out);
        c.data = j.value("data", c.data);
        c.fixture = j.value("fixture", c.fixture);
        c.statistic = j.value("statistic", c.statistic);
        c.group = j.value("group", c.group);
        c.scenario = j.value("scenario", c.scenario);
        c.threads = j.value("threads", c.threads);
        if (j.contains("synth"))
            c.synth = synth_config_from_json(j.at("synth"));
        if (j.contains("mechanism")) {
            const auto& m = j.at("mechanism");
            c.capacities = m.value("capacities", c.capacities);
            c.mutually_exclusive = m.value("mutually_exclusive", c.mutually_exclusive);
        }
    } catch (const json::exception& e) {
        detail::fail(ErrorKind::usage, "io.ConfigError", std::string("invalid run config: ") + e.what());
    }
    return c;
}

inline RunConfig load_run_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        detail::fail(ErrorKind::usage, "io.ConfigError", "cannot open config " + path, {{"path", path}});
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        detail::fail(ErrorKind::usage, "io.ConfigError", std::string("config is not valid JSON: ") + e.what());
    }
    return run_config_from_json(j);
}

/// "name:1,2;other:3" with 1-based treatment positions.
inline BlockSpec parse_blocks(const std::string& text, Index k)
{
    BlockSpec spec;
    std::string_view rest = text;
    while (!rest.empty()) {
        const auto cut = rest.find(';');
        const auto item = rest.substr(0, cut);
        const auto colon = item.find(':');
        if (colon == std::string_view::npos || colon == 0)
            detail::fail(ErrorKind::usage, "cascade.InvalidBlock", "block must look like name:1,2");
        spec.names.emplace_back(item.substr(0, colon));
        std::vector<Index> members;
        std::string_view list = item.substr(colon + 1);
        while (!list.empty()) {
            const auto comma = list.find(',');
            const auto v = parse_double(list.substr(0, comma));
            if (!v || *v != std::floor(*v) || *v < 1 || *v > static_cast<double>(k))
                detail::fail(ErrorKind::usage, "cascade.InvalidBlock",
                             "block member must be a treatment position in 1.." + std::to_string(k));
            members.push_back(static_cast<Index>(*v) - 1);
            if (comma == std::string_view::npos)
                break;
            list.remove_prefix(comma + 1);
        }
        if (members.empty())
            detail::fail(ErrorKind::usage, "cascade.InvalidBlock", "empty block");
        spec.blocks.push_back(std::move(members));
        if (cut == std::string_view::npos)
            break;
        rest.remove_prefix(cut + 1);
    }
    return spec;
}

} // namespace io
} // namespace cascade_iv

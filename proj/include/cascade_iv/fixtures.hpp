#pragma once

// Published estimates kept verbatim as text, used as arithmetic-consistency
// fixtures: the main field-level table (total effect, own-lottery Wald ratio,
// cascade), the gender split, and the 7 x 7 first-stage matrix with t-values.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cascade_iv/cascade.hpp"
#include "cascade_iv/error.hpp"
#include "cascade_iv/estimator.hpp"
#include "cascade_iv/io.hpp"

namespace cascade_iv::fixtures {

struct Table1Row {
    std::string_view field;
    std::string_view T, T_se, W, W_se, F, N, delta, delta_se;
};

struct Table3Row {
    std::string_view field;
    std::string_view Tf, Tf_se, Wf, Wf_se, Tm, Tm_se, Wm, Wm_se, diff, diff_se;
};

struct FigureCell {
    std::string_view pi, t;
};

inline const std::array<Table1Row, 7> table1_rows{{
    {"Business", ".0278", ".0175", ".00449", ".0143", "391", "19882", ".0233", ".00829"},
    {"Social science", ".0476", ".018", ".0207", ".0152", "606", "47011", ".0269", ".00881"},
    {"Teaching", ".0749", ".0284", ".0713", ".0274", "300", "11102", ".00358", ".00545"},
    {"Medicine", ".0854", ".0287", ".0598", ".0258", "166", "21169", ".0256", ".0102"},
    {"Health", ".0618", ".0224", ".0495", ".0214", "488", "26867", ".0123", ".00545"},
    {"STEM", ".064", ".0229", ".0453", ".0195", "332", "20358", ".0187", ".00848"},
    {"Other", "-.0185", ".0226", "-.0376", ".0205", "214", "3190", ".0191", ".00987"},
}};

inline const std::array<Table3Row, 7> table3_rows{{
    {"Business", "0.0255", "0.0276", "0.00326", "0.0251", "0.0334", "0.0206", "0.00942", "0.0177", "-0.00790", "0.0316"},
    {"Social science", "0.0719", "0.0246", "0.0445", "0.0217", "0.00686", "0.0231", "-0.0182", "0.0202", "0.0650", "0.0313"},
    {"Teaching", "0.0547", "0.0323", "0.0502", "0.0318", "0.153", "0.0701", "0.148", "0.0677", "-0.0988", "0.0789"},
    {"Medicine", "0.0761", "0.0338", "0.0532", "0.0315", "0.100", "0.0538", "0.0734", "0.0478", "-0.0243", "0.0600"},
    {"Health", "0.0819", "0.0277", "0.0707", "0.0265", "-0.00918", "0.0356", "-0.0262", "0.0333", "0.0911", "0.0447"},
    {"STEM", "0.00719", "0.0371", "0.00347", "0.0349", "0.0957", "0.0293", "0.0669", "0.0247", "-0.0885", "0.0462"},
    {"Other", "-0.0222", "0.0324", "-0.0489", "0.0285", "-0.0107", "0.0314", "-0.0121", "0.0280", "-0.0115", "0.0479"},
}};

/// Rows: field admitted to; columns: field whose lottery is the instrument.
inline const std::array<std::array<FigureCell, 7>, 7> figure1_cells{{
    {{{".2670541009616569", "19.71414881322004"}, {"-.0384864129529581", "-7.066693396011896"}, {"-.0016430206137129", "-.2600169626022659"}, {"-.0092456218646518", "-1.55357853528352"}, {".0043709882367854", "1.051549618791635"}, {"-.0419691280724044", "-4.557191627653074"}, {"-.014420037814604", "-.7108864030995523"}}},
    {{{"-.024195442354217", "-2.34688204447353"}, {".1999331455557314", "24.62445108109826"}, {".0027859570391869", ".2465083879611087"}, {"-.0155664809711328", "-1.848376087740449"}, {"-.007059532975271", "-1.042601925087281"}, {"-.0220592899416572", "-2.366330478093262"}, {"-.0625125406110319", "-2.366285729213455"}}},
    {{{"-.0003548960191021", "-.0727738609178356"}, {"-.0202945792634036", "-4.229883291042067"}, {".3255022286986096", "17.32240542340497"}, {"-.0030250070239469", "-.7793669219857076"}, {"-.0112459471597067", "-1.829538077384745"}, {"-.0069518679552031", "-1.278035132853394"}, {"-.0372511827956035", "-1.978843768538641"}}},
    {{{"-.0084172650590387", "-2.221203281993112"}, {".0003203404944292", ".0923549499671415"}, {"-.0006890576970252", "-.1726319738585581"}, {".1831770052549356", "12.98956298290735"}, {"-.0120999410636746", "-1.724831503016413"}, {"-.0069385699323124", "-1.318321575805309"}, {".0085097715448754", ".4949133787918358"}}},
    {{{"-.0099895059220884", "-1.764604857842328"}, {"-.0281982445985402", "-5.364540784460895"}, {"-.013023118511289", "-1.663499313533389"}, {"-.0182087352023665", "-1.888537845810508"}, {".2147643919044608", "22.05053094058542"}, {"-.0123064725383515", "-1.977390162826845"}, {"-.0447319686965577", "-1.66251646233318"}}},
    {{{"-.0605912074807216", "-5.388927512277101"}, {"-.01685973635159", "-2.888578744245208"}, {"-.0105093170397931", "-1.247678848419181"}, {"-.0370710834036859", "-3.808801767550563"}, {"-.0087650386186476", "-1.349084922240575"}, {".2031049518893526", "18.14866539347028"}, {"-.0094744668772731", "-.3445117541957404"}}},
    {{{"-.0110624033029556", "-2.279204049117297"}, {"-.0059732778602676", "-1.851150988934317"}, {"-.0081034038905279", "-1.499333668736404"}, {"-.0117065795626886", "-2.818833753168166"}, {".0006290901686215", ".134863036990328"}, {"-.0048501720826346", "-1.008447446919249"}, {".4748847541135967", "14.71918283660679"}}},
}};

inline constexpr std::uint64_t fixture_checksum = 0x8f2e5d28523c8414ULL;

/// Published values are rounded to three or four significant digits.
inline constexpr double rounding_tolerance = 0.0005;
/// Slack for binary representation of decimals at the tolerance boundary.
inline constexpr double representation_slack = 1e-9;

inline double value(std::string_view text)
{
    const auto v = io::parse_double(text);
    if (!v)
        detail::fail(ErrorKind::data, "io.FixtureMismatch", "unparseable fixture value '" + std::string(text) + "'");
    return *v;
}

inline std::uint64_t compute_checksum()
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&](std::string_view s) {
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        h ^= static_cast<unsigned char>('|');
        h *= 0x100000001b3ULL;
    };
    for (const auto& r : table1_rows)
        for (auto s : {r.field, r.T, r.T_se, r.W, r.W_se, r.F, r.N, r.delta, r.delta_se})
            feed(s);
    for (const auto& r : table3_rows)
        for (auto s : {r.field, r.Tf, r.Tf_se, r.Wf, r.Wf_se, r.Tm, r.Tm_se, r.Wm, r.Wm_se, r.diff, r.diff_se})
            feed(s);
    for (const auto& row : figure1_cells)
        for (const auto& c : row) {
            feed(c.pi);
            feed(c.t);
        }
    return h;
}

inline std::vector<std::string> field_names()
{
    std::vector<std::string> out;
    for (const auto& r : table1_rows)
        out.emplace_back(r.field);
    return out;
}

inline VectorXd table1_column(std::string_view Table1Row::*member)
{
    VectorXd v(static_cast<Index>(table1_rows.size()));
    for (std::size_t i = 0; i < table1_rows.size(); ++i)
        v(static_cast<Index>(i)) = value(table1_rows[i].*member);
    return v;
}

/// pi(j, k): effect of field k's lottery on admission to field j.
inline MatrixXd figure1_pi()
{
    MatrixXd pi(7, 7);
    for (Index j = 0; j < 7; ++j)
        for (Index k = 0; k < 7; ++k)
            pi(j, k) = value(figure1_cells[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)].pi);
    return pi;
}

inline MatrixXd figure1_t()
{
    MatrixXd t(7, 7);
    for (Index j = 0; j < 7; ++j)
        for (Index k = 0; k < 7; ++k)
            t(j, k) = value(figure1_cells[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)].t);
    return t;
}

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct Report {
    std::vector<CheckResult> checks;
    double rho_abs_m = 0.0;
    int negative_offdiag = 0;
    int positive_offdiag = 0;

    bool passed() const
    {
        for (const auto& c : checks)
            if (!c.passed)
                return false;
        return true;
    }
};

inline bool within_rounding(double a, double b) { return std::abs(a - b) <= rounding_tolerance + representation_slack; }

inline Report fixture_checks()
{
    Report rep;
    const auto checksum = compute_checksum();
    rep.checks.push_back({"checksum", checksum == fixture_checksum, "fnv1a=" + std::to_string(checksum)});

    for (const auto& r : table1_rows) {
        const double d = value(r.T) - value(r.W);
        rep.checks.push_back({"table1 " + std::string(r.field), within_rounding(d, value(r.delta)),
                              std::string(r.T) + " - " + std::string(r.W) + " = " + io::format_double(d) +
                                  " vs " + std::string(r.delta)});
    }
    for (const auto& r : table3_rows) {
        const double d = value(r.Tf) - value(r.Tm);
        rep.checks.push_back({"table3 " + std::string(r.field), within_rounding(d, value(r.diff)),
                              std::string(r.Tf) + " - " + std::string(r.Tm) + " = " + io::format_double(d) +
                                  " vs " + std::string(r.diff)});
    }

    const auto fs = FirstStage::from_matrix(figure1_pi());
    const auto vm = VacancyMatrix::from_first_stage(fs);
    rep.rho_abs_m = spectral_radius(vm.M);
    rep.checks.push_back({"figure1 rho(|M|) < 1", rep.rho_abs_m < 1.0, "rho=" + io::format_double(rep.rho_abs_m)});

    for (Index j = 0; j < 7; ++j)
        for (Index k = 0; k < 7; ++k)
            if (j != k) {
                rep.negative_offdiag += fs.pi(j, k) < 0.0 ? 1 : 0;
                rep.positive_offdiag += fs.pi(j, k) > 0.0 ? 1 : 0;
            }
    rep.checks.push_back({"figure1 substitution pattern", rep.negative_offdiag > rep.positive_offdiag,
                          std::to_string(rep.negative_offdiag) + " negative vs " +
                              std::to_string(rep.positive_offdiag) + " positive"});
    return rep;
}

/// Throws io.FixtureMismatch naming every failing check.
inline Report require_fixtures()
{
    auto rep = fixture_checks();
    if (!rep.passed()) {
        nlohmann::json failing = nlohmann::json::array();
        for (const auto& c : rep.checks)
            if (!c.passed)
                failing.push_back({{"check", c.name}, {"detail", c.detail}});
        detail::fail(ErrorKind::data, "io.FixtureMismatch", "fixture checks failed", {{"failing", failing}});
    }
    return rep;
}

} // namespace cascade_iv::fixtures

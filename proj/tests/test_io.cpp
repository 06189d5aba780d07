#include <cmath>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "cascade_iv/cascade_iv.hpp"
#include "test_support.hpp"

using namespace cascade_iv;
using namespace cascade_iv::testing;

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

const char* ten_rows = "y,a_1,a_2,z_1,z_2,x_const,x_applied_2,cluster,group\n"
                       "0.5,1,0,0.75,0,1,0,c1,f\n"
                       "1.5,0,1,0,0.5,1,1,c1,m\n"
                       "-0.2,0,0,0.25,0,1,0,c2,f\n"
                       "0.1,0,0,0,0.25,1,1,c2,m\n"
                       "2.0,1,0,0.5,0,1,0,c3,f\n"
                       "0.9,0,1,0,0.75,1,1,c3,m\n"
                       "1.1,1,0,0.75,0.5,1,1,c4,f\n"
                       "0.0,0,0,0.25,0,1,0,c4,m\n"
                       "0.3,0,1,0,0.75,1,1,c5,f\n"
                       "0.7,1,0,0.5,0,1,0,c5,m\n";

} // namespace

TEST(Csv, LoadsWellFormedFile)
{
    std::istringstream in(ten_rows);
    const auto d = io::load_dataset_csv(in);
    EXPECT_EQ(d.n(), 10);
    EXPECT_EQ(d.k(), 2);
    EXPECT_EQ(d.p(), 2);
    EXPECT_EQ(d.treatment_names, (std::vector<std::string>{"1", "2"}));
    EXPECT_EQ(d.control_names, (std::vector<std::string>{"const", "applied_2"}));
    ASSERT_TRUE(d.group_label.has_value());
    EXPECT_EQ((*d.group_label)[1], "m");
    EXPECT_EQ(d.Z(6, 1), 0.5);
    EXPECT_EQ(d.cluster[9], "c5");
}

TEST(Csv, MissingClusterColumnNamed)
{
    std::istringstream in("y,a_1,z_1,x_const\n1,0,0.5,1\n");
    try {
        io::load_dataset_csv(in);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "io.SchemaError");
        EXPECT_EQ(e.details().at("column"), "cluster");
        EXPECT_EQ(e.kind(), ErrorKind::data);
    }
}

TEST(Csv, SchemaErrors)
{
    auto load = [](const std::string& text) {
        std::istringstream in(text);
        return io::load_dataset_csv(in);
    };
    expect_code([&] { load("y,a_1,z_1,x_const,cluster\n1,0,0.5,1\n"); }, "io.SchemaError");
    expect_code([&] { load("y,a_1,z_2,x_const,cluster\n1,0,0.5,1,c\n"); }, "io.SchemaError");
    expect_code([&] { load("y,a_1,z_1,cluster\n1,0,0.5,c\n"); }, "io.SchemaError");
    expect_code([&] { load(""); }, "io.SchemaError");
    expect_code([&] { load("y,a_1,z_1,x_const,cluster\n1,0.5,0.5,1,c\n"); }, "io.SchemaError");
}

TEST(Csv, ParseErrorReportsLine)
{
    std::istringstream in("# comment\ny,a_1,z_1,x_const,cluster\n1,0,0.5,1,c\n2,1,abc,1,c\n");
    try {
        io::load_dataset_csv(in, "bad.csv");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "io.ParseError");
        EXPECT_EQ(e.details().at("line"), 4);
        EXPECT_NE(std::string(e.what()).find("bad.csv:4"), std::string::npos);
    }
}

TEST(Csv, QuotedFieldsRoundTrip)
{
    for (const std::string s : {"plain", "with,comma", "with \"quote\"", ""}) {
        const auto fields = io::split_csv(io::quote_field(s) + ",x");
        ASSERT_EQ(fields.size(), 2u);
        EXPECT_EQ(fields[0], s);
    }
}

TEST(Csv, NumberFormatRoundTripsExactly)
{
    Rng rng(1);
    for (int i = 0; i < 10000; ++i) {
        const double v = rng.normal() * std::pow(10.0, rng.uniform(-20, 20));
        EXPECT_EQ(io::parse_double(io::format_double(v)).value(), v);
    }
    EXPECT_EQ(io::parse_double(".0278").value(), 0.0278);
    EXPECT_EQ(io::parse_double("-.0185").value(), -0.0185);
    EXPECT_FALSE(io::parse_double("1,5").has_value());
    EXPECT_FALSE(io::parse_double("").has_value());
    EXPECT_FALSE(io::parse_double("1e").has_value());
}

TEST(Csv, SimulatedDatasetRoundTrip)
{
    SynthConfig s;
    s.N = 4000;
    s.K = 3;
    s.sigma_h = 1.0;
    const auto pop = generate_population(s);
    MechanismConfig cfg;
    cfg.capacities = synth_capacities(s);
    const auto d = simulate_iv_dataset(pop, cfg, 4, 7);
    std::stringstream buf;
    io::write_dataset_csv(buf, d, {"simulate", 7});
    const auto back = io::load_dataset_csv(buf);
    ASSERT_EQ(back.n(), d.n());
    EXPECT_LE((back.y - d.y).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((back.A - d.A).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((back.Z - d.Z).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((back.X - d.X).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((back.aux - d.aux).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(back.cluster, d.cluster);
    EXPECT_EQ(back.group_label, d.group_label);
    EXPECT_EQ(back.treatment_names, d.treatment_names);
    EXPECT_EQ(back.aux_names, d.aux_names);
}

TEST(Csv, ContinuousTreatmentsNeedOptIn)
{
    auto iv = linear_iv(3, 50, 2, 10);
    std::stringstream buf;
    io::write_dataset_csv(buf, iv.data, {"test", std::nullopt});
    const std::string text = buf.str();
    std::istringstream strict(text);
    expect_code([&] { io::load_dataset_csv(strict); }, "io.SchemaError");
    std::istringstream relaxed(text);
    io::LoadOptions opts;
    opts.require_binary_treatments = false;
    EXPECT_EQ(io::load_dataset_csv(relaxed, "<s>", opts).n(), 50);
}

TEST(Csv, PopulationRoundTrip)
{
    SynthConfig s;
    s.N = 500;
    s.K = 3;
    s.sigma_h = 0.5;
    const auto pop = generate_population(s);
    std::stringstream buf;
    io::write_population_csv(buf, pop, {"simulate", 1});
    const auto back = io::population_from_table(io::read_csv(buf, "<pop>"));
    EXPECT_EQ(back.programs, pop.programs);
    EXPECT_EQ(back.merit, pop.merit);
    EXPECT_EQ(back.prefs, pop.prefs);
    EXPECT_EQ(back.group, pop.group);
    EXPECT_EQ(back.po, pop.po);
    EXPECT_EQ(back.covariates, pop.covariates);
    EXPECT_EQ(back.covariate_names, pop.covariate_names);
}

TEST(Csv, ProvenanceLine)
{
    EXPECT_EQ(io::provenance_line({"verify", 42}), "# cascade_iv 1.0.0 command=verify seed=42\n");
    EXPECT_EQ(io::provenance_line({"estimate", std::nullopt}), "# cascade_iv 1.0.0 command=estimate\n");
    std::stringstream buf;
    EstimateSet e;
    io::write_estimates_csv(buf, e, {"estimate", std::nullopt});
    EXPECT_EQ(buf.str().rfind("# cascade_iv ", 0), 0u);
}

TEST(Config, RunConfigFromJson)
{
    const auto j = nlohmann::json::parse(R"({
        "seed": 42, "reps": 50, "tol": 1e-8, "blocks": "a:1,2",
        "synth": {"N": 1000, "K": 2, "base_effects": [0.1, 0.2], "sigma_h": 0.5,
                  "complier_targets": {"p02": 0.4, "p12": 0.3}},
        "mechanism": {"capacities": [100, 200], "mutually_exclusive": false}
    })");
    const auto c = io::run_config_from_json(j);
    EXPECT_EQ(c.seed.value(), 42u);
    EXPECT_EQ(c.reps, 50);
    EXPECT_EQ(c.tol, 1e-8);
    EXPECT_EQ(c.blocks, "a:1,2");
    EXPECT_EQ(c.synth.N, 1000);
    EXPECT_EQ(c.synth.base_effects, (std::vector<double>{0.1, 0.2}));
    ASSERT_TRUE(c.synth.complier_targets.has_value());
    EXPECT_EQ(c.synth.complier_targets->p02, 0.4);
    EXPECT_EQ(c.synth.complier_targets->e20, ComplierTargets{}.e20);
    EXPECT_EQ(c.capacities, (std::vector<int>{100, 200}));
    EXPECT_FALSE(c.mutually_exclusive);
    expect_code([] { io::RunConfig{}.require_seed("simulate"); }, "cli.MissingSeed");
}

TEST(Config, SynthJsonRoundTrip)
{
    SynthConfig s;
    s.N = 777;
    s.K = 2;
    s.selectivity = {1.0, 3.0};
    s.group_taste = {0.1, -0.1};
    s.complier_targets = ComplierTargets{0.2, 0.7, 1, 2, 3};
    s.seed = 99;
    const auto back = io::synth_config_from_json(io::synth_config_to_json(s));
    EXPECT_EQ(io::synth_config_to_json(back), io::synth_config_to_json(s));
}

TEST(Config, BadConfigRejected)
{
    expect_code([] { io::run_config_from_json(nlohmann::json::parse(R"({"reps": "many"})")); }, "io.ConfigError");
    expect_code([] { io::run_config_from_json(nlohmann::json::parse(R"({"synth": {"N": -1}})")); },
                "synth.InvalidConfig");
    expect_code([] { io::load_run_config("/nonexistent/config.json"); }, "io.ConfigError");
}

TEST(Config, ParseBlocks)
{
    const auto b = io::parse_blocks("soft:1,2;hard:3", 3);
    EXPECT_EQ(b.names, (std::vector<std::string>{"soft", "hard"}));
    ASSERT_EQ(b.blocks.size(), 2u);
    EXPECT_EQ(b.blocks[0], (std::vector<Index>{0, 1}));
    EXPECT_EQ(b.blocks[1], (std::vector<Index>{2}));
    expect_code([] { io::parse_blocks("x:4", 3); }, "cascade.InvalidBlock");
    expect_code([] { io::parse_blocks("x:", 3); }, "cascade.InvalidBlock");
    expect_code([] { io::parse_blocks("1,2", 3); }, "cascade.InvalidBlock");
    expect_code([] { io::parse_blocks("x:1.5", 3); }, "cascade.InvalidBlock");
}

TEST(Fixtures, ChecksumMatchesTranscription)
{
    EXPECT_EQ(fixtures::compute_checksum(), fixtures::fixture_checksum);
}

TEST(Fixtures, PublishedArithmeticHolds)
{
    const auto rep = fixtures::fixture_checks();
    for (const auto& c : rep.checks)
        EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
    EXPECT_LT(rep.rho_abs_m, 1.0);
    EXPECT_GT(rep.negative_offdiag, rep.positive_offdiag);
    EXPECT_NO_THROW(fixtures::require_fixtures());
}

TEST(Fixtures, NamedRows)
{
    // Business: 0.0278 - 0.00449 = 0.0233
    const auto& b = fixtures::table1_rows[0];
    EXPECT_EQ(b.field, "Business");
    EXPECT_NEAR(fixtures::value(b.T) - fixtures::value(b.W), fixtures::value(b.delta), 0.0005);
    // Social science by gender: 0.0719 - 0.00686 = 0.0650
    const auto& s = fixtures::table3_rows[1];
    EXPECT_EQ(s.field, "Social science");
    EXPECT_NEAR(fixtures::value(s.Tf) - fixtures::value(s.Tm), 0.0650, 0.0005);
    EXPECT_NEAR(fixtures::value(s.diff), 0.0650, 1e-15);
}

TEST(Fixtures, FigureOrientation)
{
    const MatrixXd pi = fixtures::figure1_pi();
    ASSERT_EQ(pi.rows(), 7);
    for (Index j = 0; j < 7; ++j) {
        EXPECT_GT(pi(j, j), 0.15);
        for (Index k = 0; k < 7; ++k)
            if (j != k)
                EXPECT_LT(std::abs(pi(j, k)), pi(k, k));
    }
    // row Business, column Social science
    EXPECT_NEAR(pi(0, 1), -0.0384864129529581, 1e-17);
    EXPECT_NEAR(fixtures::figure1_t()(0, 1), -7.066693396011896, 1e-15);
    const auto sol = neumann_solve(VacancyMatrix::from_first_stage(FirstStage::from_matrix(pi)),
                                   fixtures::table1_column(&fixtures::Table1Row::W), 1e-10, 1000);
    EXPECT_GT(sol.rounds.size(), 1u);
}

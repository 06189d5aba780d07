// cascade_iv command-line front end.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cascade_iv/cascade_iv.hpp"

namespace fs = std::filesystem;
using namespace cascade_iv;
using nlohmann::json;

namespace {

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> reps;
    std::optional<double> tol;
    std::optional<int> max_rounds;
    std::optional<int> bootstrap_reps;
    std::optional<std::string> out, blocks, group_col, data, fixture, statistic, group, scenario;
    std::optional<unsigned> threads;
};

void add_common(CLI::App* cmd, Flags& f)
{
    cmd->add_option("--config", f.config, "JSON run configuration");
    cmd->add_option("--seed", f.seed, "master seed");
    cmd->add_option("--reps", f.reps, "lottery replications");
    cmd->add_option("--tol", f.tol, "Neumann tolerance");
    cmd->add_option("--max-rounds", f.max_rounds, "Neumann round limit");
    cmd->add_option("--bootstrap-reps", f.bootstrap_reps, "cluster bootstrap replications");
    cmd->add_option("--blocks", f.blocks, "block aggregation, e.g. name:1,2;other:3");
    cmd->add_option("--group-col", f.group_col, "group label column in the data CSV");
    cmd->add_option("--data", f.data, "dataset CSV");
    cmd->add_option("--fixture", f.fixture, "embedded fixture (estimate: table1; cascade: figure1, diagonal)");
    cmd->add_option("--statistic", f.statistic, "bootstrap statistic: beta, wald, cascade_delta, conditional_entrant");
    cmd->add_option("--group", f.group, "group label for conditional_entrant");
    cmd->add_option("--scenario", f.scenario, "simulation scenario: default, three_program");
    cmd->add_option("--threads", f.threads, "worker threads (0 = hardware)");
    cmd->add_option("--out", f.out, "output directory");
}

io::RunConfig resolve(const Flags& f)
{
    io::RunConfig c;
    if (!f.config.empty())
        c = io::load_run_config(f.config);
    else {
        // homogeneous default scenario
        c.synth.K = 3;
        c.synth.N = 20000;
        c.synth.brackets = 40;
        c.synth.base_effects = {0.2, -0.1, 0.05};
        c.synth.sigma_h = 0.0;
    }
    if (f.seed)
        c.seed = *f.seed;
    if (f.reps)
        c.reps = *f.reps;
    if (f.tol)
        c.tol = *f.tol;
    if (f.max_rounds)
        c.max_rounds = *f.max_rounds;
    if (f.bootstrap_reps)
        c.bootstrap_reps = *f.bootstrap_reps;
    if (f.out)
        c.out = *f.out;
    if (f.blocks)
        c.blocks = *f.blocks;
    if (f.group_col)
        c.group_col = *f.group_col;
    if (f.data)
        c.data = *f.data;
    if (f.fixture)
        c.fixture = *f.fixture;
    if (f.statistic)
        c.statistic = *f.statistic;
    if (f.group)
        c.group = *f.group;
    if (f.scenario)
        c.scenario = *f.scenario;
    if (f.threads)
        c.threads = *f.threads;
    if (!(c.tol > 0.0))
        detail::fail(ErrorKind::usage, "cli.InvalidTolerance", "--tol must be positive");
    if (c.reps < 1)
        detail::fail(ErrorKind::usage, "cli.InvalidReplications", "--reps must be at least 1");
    return c;
}

std::string out_path(const io::RunConfig& c, const std::string& file)
{
    fs::create_directories(c.out);
    return (fs::path(c.out) / file).string();
}

Dataset load_data(const io::RunConfig& c)
{
    if (c.data.empty())
        detail::fail(ErrorKind::usage, "cli.MissingData", "--data is required");
    io::LoadOptions opts;
    opts.group_column = c.group_col;
    return io::load_dataset_csv(c.data, opts);
}

struct World {
    Population pop;
    MechanismConfig mech;
};

World build_world(const io::RunConfig& c, std::uint64_t seed)
{
    World w;
    auto synth = c.synth;
    synth.seed = derive_seed(seed, 0);
    if (c.scenario == "three_program") {
        if (!synth.complier_targets)
            synth.complier_targets = ComplierTargets{};
        synth.K = 2;
        auto sc = scenario_three_program(synth);
        w.pop = std::move(sc.population);
        w.mech.capacities = sc.capacities;
        std::cout << "predicted beta_2 = " << io::format_double(sc.predicted_beta2) << "\n";
    } else if (c.scenario == "default") {
        w.pop = generate_population(synth);
        w.mech.capacities = c.capacities.empty() ? synth_capacities(synth) : c.capacities;
    } else {
        detail::fail(ErrorKind::usage, "cli.UnknownScenario", "unknown scenario '" + c.scenario + "'");
    }
    w.mech.mutually_exclusive = c.mutually_exclusive;
    return w;
}

std::vector<int> treatment_programs(const Dataset& d)
{
    std::vector<int> out;
    for (const auto& n : d.treatment_names)
        out.push_back(std::stoi(n));
    return out;
}

int cmd_simulate(const io::RunConfig& c)
{
    const auto seed = c.require_seed("simulate");
    const auto world = build_world(c, seed);
    const io::Provenance prov{"simulate", seed};
    const Dataset d = simulate_iv_dataset(world.pop, world.mech, c.reps, derive_seed(seed, 1), c.threads);
    {
        auto out = io::open_output(out_path(c, "population.csv"));
        io::write_population_csv(out, world.pop, prov);
    }
    io::write_dataset_csv(out_path(c, "dataset.csv"), d, prov);
    std::vector<CascadeEvent> events;
    slot_expansion_oracle_all(world.pop, world.mech, treatment_programs(d), c.reps, derive_seed(seed, 1), c.threads,
                              &events);
    auto ev = io::open_output(out_path(c, "events.jsonl"));
    io::write_events_jsonl(ev, events);
    std::cout << "wrote " << d.n() << " rows, " << events.size() << " cascade events to " << c.out << "\n";
    return 0;
}

int estimate_fixture(const io::RunConfig& c)
{
    if (c.fixture != "table1")
        detail::fail(ErrorKind::usage, "cli.UnknownFixture", "estimate supports --fixture table1");
    const auto names = fixtures::field_names();
    const VectorXd T = fixtures::table1_column(&fixtures::Table1Row::T);
    const VectorXd W = fixtures::table1_column(&fixtures::Table1Row::W);
    const VectorXd published = fixtures::table1_column(&fixtures::Table1Row::delta);
    const VectorXd delta = cascade_decomposition(T, W);
    auto out = io::open_output(out_path(c, "estimates.csv"));
    out << io::provenance_line({"estimate --fixture table1", std::nullopt});
    out << "treatment,T,wald,delta,published_delta,abs_diff\n";
    std::vector<std::vector<std::string>> rows;
    bool ok = true;
    for (Index k = 0; k < T.size(); ++k) {
        const double diff = std::abs(delta(k) - published(k));
        ok = ok && fixtures::within_rounding(delta(k), published(k));
        out << io::quote_field(names[static_cast<std::size_t>(k)]) << ',' << io::format_double(T(k)) << ','
            << io::format_double(W(k)) << ',' << io::format_double(delta(k)) << ','
            << io::format_double(published(k)) << ',' << io::format_double(diff) << "\n";
        rows.push_back({names[static_cast<std::size_t>(k)], io::fixed(T(k), 4), io::fixed(W(k), 5),
                        io::fixed(delta(k), 5), io::fixed(published(k), 5)});
    }
    io::print_table(std::cout, {"field", "T", "W", "T-W", "published"}, rows);
    if (!ok)
        detail::fail(ErrorKind::data, "io.FixtureMismatch", "cascade column disagrees with T - W");
    return 0;
}

void write_blocks(const io::RunConfig& c, const EstimateSet& e)
{
    auto spec = block_weights(e.first_stage, io::parse_blocks(c.blocks, static_cast<Index>(e.names.size())));
    const VectorXd coef = block_coefficients(spec, e.beta);
    auto out = io::open_output(out_path(c, "blocks.csv"));
    out << io::provenance_line({"estimate", c.seed});
    out << "block,treatment,weight,block_coefficient\n";
    for (std::size_t b = 0; b < spec.blocks.size(); ++b)
        for (std::size_t i = 0; i < spec.blocks[b].size(); ++i)
            out << io::quote_field(spec.names[b]) << ','
                << io::quote_field(e.names[static_cast<std::size_t>(spec.blocks[b][i])]) << ','
                << io::format_double(spec.weights[b](static_cast<Index>(i))) << ','
                << io::format_double(coef(static_cast<Index>(b))) << "\n";
}

int cmd_estimate(const io::RunConfig& c)
{
    if (!c.fixture.empty())
        return estimate_fixture(c);
    const Dataset d = load_data(c);
    const auto e = estimate(d);
    std::optional<BootstrapResult> boot;
    if (c.bootstrap_reps > 0) {
        const auto seed = c.require_seed("estimate with --bootstrap-reps");
        boot = cluster_bootstrap(d, named_statistic(BootstrapStatistic::beta), c.bootstrap_reps, seed,
                                 {0.10, c.threads});
    }
    auto out = io::open_output(out_path(c, "estimates.csv"));
    io::write_estimates_csv(out, e, {"estimate", c.seed}, boot ? &*boot : nullptr);
    io::print_estimates(std::cout, e);
    if (!c.blocks.empty())
        write_blocks(c, e);
    return 0;
}

int cmd_cascade(const io::RunConfig& c)
{
    FirstStage fs;
    VectorXd w;
    std::vector<std::string> names;
    if (!c.fixture.empty()) {
        if (c.fixture != "figure1" && c.fixture != "diagonal")
            detail::fail(ErrorKind::usage, "cli.UnknownFixture", "cascade supports --fixture figure1 or diagonal");
        MatrixXd pi = fixtures::figure1_pi();
        if (c.fixture == "diagonal")
            pi = MatrixXd(pi.diagonal().asDiagonal());
        fs = FirstStage::from_matrix(pi);
        w = fixtures::table1_column(&fixtures::Table1Row::W);
        names = fixtures::field_names();
    } else {
        const Dataset d = load_data(c);
        fs = fit_first_stage(d);
        w = wald_ratios(fit_reduced_form(d), fs);
        names = d.treatment_names;
    }
    const auto sol = neumann_solve(VacancyMatrix::from_first_stage(fs), w, c.tol, c.max_rounds);
    auto out = io::open_output(out_path(c, "trace.csv"));
    io::write_trace_csv(out, sol, names, {"cascade", c.seed});
    std::vector<std::vector<std::string>> rows;
    for (Index k = 0; k < sol.T.size(); ++k)
        rows.push_back({names[static_cast<std::size_t>(k)], io::fixed(w(k)), io::fixed(sol.T(k)),
                        io::fixed(sol.delta(k))});
    io::print_table(std::cout, {"treatment", "W", "T", "delta"}, rows);
    std::cout << "rounds = " << sol.rounds.size() - 1 << ", rho(|M|) <= " << io::format_double(sol.rho_estimate)
              << "\n";
    return 0;
}

int cmd_verify(const io::RunConfig& c)
{
    const auto seed = c.require_seed("verify");
    const auto world = build_world(c, seed);
    const Dataset d = simulate_iv_dataset(world.pop, world.mech, c.reps, derive_seed(seed, 1), c.threads);
    const auto e = estimate(d);
    const auto progs = treatment_programs(d);
    const auto oracle = slot_expansion_oracle_all(world.pop, world.mech, progs, c.reps, derive_seed(seed, 1), c.threads);
    std::vector<io::VerifyRow> rows;
    std::vector<std::vector<std::string>> table;
    for (std::size_t k = 0; k < progs.size(); ++k) {
        io::VerifyRow r;
        r.treatment = d.treatment_names[k];
        r.oracle = oracle[k].effect;
        r.oracle_se = oracle[k].se;
        r.beta = e.beta(static_cast<Index>(k));
        r.beta_se = e.se_beta(static_cast<Index>(k));
        r.undersubscribed = oracle[k].undersubscribed;
        const double se = std::hypot(r.oracle_se, r.beta_se);
        r.z = se > 0.0 ? (r.oracle - r.beta) / se : (r.oracle == r.beta ? 0.0 : INFINITY);
        r.agree = r.undersubscribed || std::abs(r.z) < 3.0;
        table.push_back({r.treatment, io::fixed(r.oracle), io::fixed(r.oracle_se), io::fixed(r.beta),
                         io::fixed(r.beta_se), io::fixed(r.z, 2), r.agree ? "yes" : "NO"});
        rows.push_back(r);
    }
    auto out = io::open_output(out_path(c, "verify.csv"));
    io::write_verify_csv(out, rows, {"verify", seed});
    io::print_table(std::cout, {"program", "oracle", "se", "beta", "se", "z", "agree"}, table);
    return 0;
}

int cmd_bootstrap(const io::RunConfig& c)
{
    const auto seed = c.require_seed("bootstrap");
    const Dataset d = load_data(c);
    const auto which = parse_statistic(c.statistic);
    if (!which)
        detail::fail(ErrorKind::usage, "cli.UnknownStatistic", "unknown statistic '" + c.statistic + "'");
    const int reps = c.bootstrap_reps > 0 ? c.bootstrap_reps : 1000;
    const auto boot = cluster_bootstrap(d, named_statistic(*which, c.group), reps, seed, {0.10, c.threads});
    const auto e = estimate(d);
    auto out = io::open_output(out_path(c, "estimates.csv"));
    io::write_estimates_csv(out, e, {"bootstrap --statistic " + c.statistic, seed}, &boot);
    std::vector<std::vector<std::string>> rows;
    for (Index k = 0; k < boot.estimate.size(); ++k)
        rows.push_back({d.treatment_names[static_cast<std::size_t>(k)], io::fixed(boot.estimate(k)),
                        io::fixed(boot.se(k)), io::fixed(boot.ci_lo(k)), io::fixed(boot.ci_hi(k))});
    io::print_table(std::cout, {"treatment", c.statistic, "boot_se", "ci_lo", "ci_hi"}, rows);
    std::cout << "replications = " << boot.reps << ", failed = " << boot.failed << "\n";
    return 0;
}

int cmd_balance(const io::RunConfig& c)
{
    const Dataset d = load_data(c);
    if (d.aux.cols() == 0)
        detail::fail(ErrorKind::usage, "cli.MissingCovariates", "balance needs predetermined covariates (w_* columns)");
    const auto b = balance_check(d, d.aux, d.aux_names);
    auto out = io::open_output(out_path(c, "balance.csv"));
    io::write_balance_csv(out, b, {"balance", c.seed});
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : b.rows)
        rows.push_back({r.name, io::fixed(r.coef), io::fixed(r.se)});
    io::print_table(std::cout, {"covariate", "coef on L", "se"}, rows);
    std::cout << "joint F(" << b.df << ", " << b.clusters - 1 << ") = " << io::fixed(b.f_stat, 3)
              << ", p = " << io::fixed(b.p_value, 3) << "\n";
    return 0;
}

int cmd_fixtures()
{
    const auto rep = fixtures::require_fixtures();
    for (const auto& ch : rep.checks)
        std::cout << (ch.passed ? "ok   " : "FAIL ") << ch.name << ": " << ch.detail << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"cascade_iv: multi-treatment IV estimation and cascade verification"};
    app.set_version_flag("--version", std::string(version));
    app.require_subcommand(1);
    Flags flags;
    auto* simulate = app.add_subcommand("simulate", "simulate a lottery dataset and cascade event log");
    auto* estimate_cmd = app.add_subcommand("estimate", "2SLS, Wald ratios and cascade decomposition");
    auto* cascade = app.add_subcommand("cascade", "Neumann-series cascade with a per-round trace");
    auto* verify = app.add_subcommand("verify", "slot-expansion oracle against 2SLS");
    auto* bootstrap = app.add_subcommand("bootstrap", "cluster bootstrap of a named statistic");
    auto* balance = app.add_subcommand("balance", "balance of covariates on the luck variable");
    auto* fixture_cmd = app.add_subcommand("fixtures", "arithmetic checks on the embedded published fixtures");
    for (auto* cmd : {simulate, estimate_cmd, cascade, verify, bootstrap, balance, fixture_cmd})
        add_common(cmd, flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << json{{"error", "cli.UsageError"}, {"message", e.what()}, {"details", json::object()}}.dump()
                  << "\n";
        return 2;
    }

    try {
        const auto cfg = resolve(flags);
        if (simulate->parsed())
            return cmd_simulate(cfg);
        if (estimate_cmd->parsed())
            return cmd_estimate(cfg);
        if (cascade->parsed())
            return cmd_cascade(cfg);
        if (verify->parsed())
            return cmd_verify(cfg);
        if (bootstrap->parsed())
            return cmd_bootstrap(cfg);
        if (balance->parsed())
            return cmd_balance(cfg);
        return cmd_fixtures();
    } catch (const Error& e) {
        std::cerr << e.to_json().dump() << "\n";
        return exit_code(e.kind());
    } catch (const fs::filesystem_error& e) {
        std::cerr << json{{"error", "io.FileError"}, {"message", e.what()}, {"details", json::object()}}.dump() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", "cli.InternalError"}, {"message", e.what()}, {"details", json::object()}}.dump()
                  << "\n";
        return 4;
    }
}

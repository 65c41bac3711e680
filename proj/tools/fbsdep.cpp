#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fbsdep/fixtures/oracle.hpp"
#include "fbsdep/pathsim/export.hpp"
#include "fbsdep/report/report.hpp"

namespace fs = std::filesystem;
using namespace fbsdep;
using report::json;

namespace {

// exit codes
constexpr int exit_config = 2;
constexpr int exit_pipeline = 3;

/// Anything thrown after the inputs were loaded.
struct PipelineFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <class Fn>
decltype(auto) pipeline(Fn&& fn) {
    try {
        return fn();
    } catch (const std::exception& e) {
        throw PipelineFailure(e.what());
    }
}

std::string default_out() {
    const char* env = std::getenv("FBSDEP_OUT");
    return env && *env ? env : "out";
}

/// Flags shared by every pipeline subcommand.
struct CommonArgs {
    std::string fixture, scenario, config, out = default_out();
    int steps = 64;
    std::size_t batch = 20000;
    std::uint64_t seed = 0;
    int basis_degree = -1;
    bool no_refine = false;
    std::vector<std::string> tol;

    CLI::Option *o_fixture{}, *o_scenario{}, *o_steps{}, *o_batch{}, *o_seed{}, *o_degree{}, *o_config{};

    void add(CLI::App* app) {
        o_fixture = app->add_option("--fixture", fixture, "named fixture")
                        ->check(CLI::IsMember(fixtures::fixture_names()));
        o_scenario = app->add_option("--scenario", scenario, "scenario file (JSON)");
        o_fixture->excludes(o_scenario);
        o_config = app->add_option("--config", config, "re-run the config embedded in a report.json");
        o_steps = app->add_option("--steps", steps, "time steps N")->check(CLI::PositiveNumber);
        o_batch = app->add_option("--batch", batch, "number of paths M");
        o_seed = app->add_option("--seed", seed, "RNG seed (required unless --config)");
        o_degree = app->add_option("--basis-degree", basis_degree, "polynomial degree of the regression basis")
                       ->check(CLI::NonNegativeNumber);
        app->add_flag("--no-refine", no_refine, "skip the implicit refinement pass");
        app->add_option("--tol", tol, "tolerance override, name=value (repeatable)");
        app->add_option("--out", out, "output directory (default: $FBSDEP_OUT or ./out)");
    }

    /// Explicit flags override a loaded config.
    report::RunConfig build(const std::vector<std::string>& verify = {}, bool set_verify = false) const {
        report::RunConfig c;
        if (o_config->count()) c = report::config_from_json(report::read_json_file(config).at("config"));
        if (o_fixture->count()) {
            c.fixture = fixture;
            c.scenario.reset();
            c.scenario_path.clear();
        }
        if (o_scenario->count()) {
            c.fixture.clear();
            c.scenario = report::read_json_file(scenario);
            c.scenario_path = fs::path(scenario).filename().string();
        }
        if (o_steps->count() || !o_config->count()) c.steps = steps;
        if (o_batch->count() || !o_config->count()) c.batch = batch;
        if (o_seed->count()) c.seed = seed;
        if (o_degree->count()) c.basis_degree = basis_degree;
        if (no_refine) c.refine = false;
        if (set_verify) c.verify = report::normalize_selection(verify);
        for (const auto& t : tol) {
            const auto eq = t.find('=');
            if (eq == std::string::npos || eq == 0) throw model::ConfigError("--tol expects name=value, got '" + t + "'");
            try {
                std::size_t used = 0;
                const double v = std::stod(t.substr(eq + 1), &used);
                if (used != t.size() - eq - 1) throw std::invalid_argument("trailing characters");
                c.tolerances[t.substr(0, eq)] = v;
            } catch (const std::logic_error&) {
                throw model::ConfigError("--tol: '" + t.substr(eq + 1) + "' is not a number");
            }
        }
        c.out_dir = out;
        report::validate(c);
        return c;
    }
};

void write_json(const fs::path& p, const json& j) {
    std::ofstream os(p);
    os << j.dump(2) << '\n';
}

pathsim::PathBatch simulate(const report::Scenario& sc, const report::RunConfig& c) {
    const pathsim::TimeGrid grid(sc.spec.t0, sc.spec.T, c.steps);
    const auto noise = pathsim::sample_noise(grid, sc.spec.jumps, c.batch, *c.seed);
    auto pb = pathsim::simulate_batch(sc.spec, sc.policy, sc.x0, noise);
    if (pb.invalid_count() == pb.M) throw model::DomainError("every path is invalid: " + pb.first_failure);
    return pb;
}

json batch_summary(const pathsim::PathBatch& pb) {
    return {{"paths", pb.M},
            {"steps", pb.grid.N},
            {"invalid_paths", pb.invalid_count()},
            {"first_failure", pb.first_failure}};
}

int cmd_simulate(const CommonArgs& a, bool binary) {
    const auto c = a.build();
    const auto sc = report::load_source(c);
    const auto pb = pipeline([&] { return simulate(sc, c); });
    fs::create_directories(c.out_dir);
    if (binary) {
        std::ofstream os(fs::path(c.out_dir) / "paths.bin", std::ios::binary);
        pathsim::write_binary(os, pb);
    } else {
        std::ofstream os(fs::path(c.out_dir) / "paths.csv");
        pathsim::write_csv(os, pb);
    }
    json j = {{"config", report::to_json(c)}, {"source", sc.name}, {"policy", sc.policy_text}};
    j["batch"] = batch_summary(pb);
    write_json(fs::path(c.out_dir) / "simulate.json", j);
    std::cout << sc.name << ": " << pb.M << " paths, " << pb.invalid_count() << " invalid -> " << c.out_dir << '\n';
    return 0;
}

int cmd_solve_bsdep(const CommonArgs& a, const std::vector<double>& candidates) {
    const auto c = a.build();
    const auto sc = report::load_source(c);
    bsde::BackwardOptions bo;
    bo.refine = c.refine;
    fs::create_directories(c.out_dir);
    json j = {{"config", report::to_json(c)}, {"source", sc.name}, {"policy", sc.policy_text}};

    const auto pb = pipeline([&] { return simulate(sc, c); });
    const auto sol = pipeline([&] { return bsde::solve_backward(sc.spec, pb, sc.profile.basis, bo); });
    const auto cost = pipeline([&] { return bsde::cost_functional(sol); });
    double cmax = 0;
    for (double v : sol.fields.cond) cmax = std::max(cmax, v);
    j["batch"] = batch_summary(pb);
    j["J"] = cost.J;
    j["J_stderr"] = cost.stderr;
    j["max_condition"] = cmax;
    {
        std::ofstream os(fs::path(c.out_dir) / "bsdep.csv");
        bsde::write_solution_csv(os, sol);
    }
    std::cout << sc.name << ": J = " << cost.J << " +- " << cost.stderr << '\n';

    if (!candidates.empty()) {
        if (sc.spec.k != 1) throw model::ConfigError("--candidates needs a scalar control");
        std::vector<pathsim::ControlPolicy> pols;
        for (double u : candidates) pols.push_back(pathsim::ControlPolicy::constant({u}));
        bsde::ValueOptions vo;
        vo.batch = c.batch;
        vo.seed = *c.seed;
        vo.steps = c.steps;
        vo.basis = sc.profile.basis;
        vo.backward = bo;
        const auto ve = pipeline([&] { return bsde::estimate_value(sc.spec, sc.x0, pols, vo); });
        json tab = json::array();
        for (std::size_t i = 0; i < ve.table.size(); ++i) {
            const auto& r = ve.table[i];
            tab.push_back({{"u", candidates[i]},
                           {"J", report::detail::clean(r.J)},
                           {"J_stderr", r.stderr},
                           {"invalid_paths", r.invalid},
                           {"excluded", r.excluded},
                           {"note", r.note}});
        }
        j["candidates"] = tab;
        j["value"] = report::detail::clean(ve.value);
        j["value_stderr"] = ve.stderr;
        j["argmin"] = ve.argmin >= 0 ? json(candidates[static_cast<std::size_t>(ve.argmin)]) : json(nullptr);
        if (ve.argmin >= 0)
            std::cout << "value " << ve.value << " +- " << ve.stderr << " at u = " << candidates[ve.argmin] << '\n';
    }
    write_json(fs::path(c.out_dir) / "bsdep.json", j);
    return 0;
}

int cmd_solve_adjoint(const CommonArgs& a, bool dual) {
    const auto c = a.build();
    const auto sc = report::load_source(c);
    if (sc.spec.n != 1) throw model::ConfigError("adjoint solves support scalar state only");
    report::detail::Pipeline pl(sc, c);
    const auto& first = pipeline([&]() -> const adjoint::AdjointField& { return pl.first(); });
    const auto& second = pipeline([&]() -> const adjoint::AdjointField& { return pl.second(); });
    fs::create_directories(c.out_dir);
    const fs::path dir(c.out_dir);
    {
        std::ofstream os(dir / "adjoint_first.csv");
        adjoint::write_adjoint_csv(os, first, "first");
    }
    {
        std::ofstream os(dir / "adjoint_second.csv");
        adjoint::write_adjoint_csv(os, second, "second");
    }
    json j = {{"config", report::to_json(c)},
              {"source", sc.name},
              {"policy", sc.policy_text},
              {"first_method", first.method},
              {"second_method", second.method}};
    j["batch"] = batch_summary(pl.batch());
    if (dual) {
        const auto& d = pipeline([&]() -> const adjoint::DualSystem& { return pl.dual(); });
        std::ofstream os1(dir / "dual_first.csv"), os2(dir / "dual_second.csv"), os3(dir / "dual_h.csv");
        adjoint::write_adjoint_csv(os1, d.first, "dual");
        adjoint::write_adjoint_csv(os2, d.second, "dual2");
        adjoint::write_h_csv(os3, d, c.steps);
        j["nonpositive_jump_factors"] = d.nonpositive_jump_factors;
    }
    write_json(fs::path(c.out_dir) / "adjoint.json", j);
    std::cout << sc.name << ": first-order " << first.method << ", second-order " << second.method << " -> "
              << c.out_dir << '\n';
    return 0;
}

int cmd_verify(const CommonArgs& a, const std::vector<std::string>& verify, bool quiet) {
    const bool set_verify = !verify.empty() || !a.o_config->count();
    const auto c = a.build(verify, set_verify);
    // load errors propagate; anything later is embedded in the report
    const auto rep = report::run(c);
    report::write_outputs(rep, c.out_dir);
    if (!quiet) report::write_summary(std::cout, rep);
    return rep.exit_code();
}

int cmd_oracle(const CommonArgs& a, const std::vector<double>& us, const fixtures::OracleSpec& os) {
    report::RunConfig c;
    if (!a.o_fixture->count() && !a.o_scenario->count())
        throw model::ConfigError("oracle needs --fixture or --scenario");
    c.fixture = a.fixture;
    if (a.o_scenario->count()) {
        c.scenario = report::read_json_file(a.scenario);
        c.scenario_path = fs::path(a.scenario).filename().string();
    }
    c.seed = 0;  // deterministic; satisfies validation only
    const auto sc = report::load_source(c);
    if (sc.spec.k != 1) throw model::ConfigError("oracle candidates need a scalar control");
    std::vector<model::ControlSet::Vec> cand;
    for (double u : us) {
        model::ControlSet::Vec v{};
        v[0] = u;
        cand.push_back(v);
    }
    const auto r = fixtures::oracle_argmin(sc.spec, sc.x0.at(0), cand, os);
    json j = {{"source", sc.name},
              {"x0", sc.x0.at(0)},
              {"steps", os.steps},
              {"hermite", os.hermite},
              {"max_jumps", os.max_jumps}};
    j["table"] = json::array();
    for (std::size_t i = 0; i < us.size(); ++i)
        j["table"].push_back({{"u", us[i]},
                              {"J", r.table[i].J},
                              {"tail_bound", r.table[i].tail_bound},
                              {"quadrature_diff", r.table[i].quadrature_diff},
                              {"error_bound", r.table[i].error_bound()}});
    j["argmin"] = us[r.argmin];
    j["J"] = r.J;
    json near = json::array();
    for (auto i : r.near_optimal) near.push_back(us[i]);
    j["near_optimal"] = near;
    std::cout << j.dump(2) << '\n';
    return 0;
}

int cmd_diff(const std::string& a, const std::string& b, const std::string& csv, bool mc_only) {
    const auto d = report::diff_reports(report::read_json_file(a), report::read_json_file(b));
    if (!csv.empty()) {
        std::ofstream os(csv);
        report::write_diff_csv(os, d);
    }
    std::cout << d.to_json().dump(2) << '\n';
    const bool ok = mc_only ? d.mc_within_bounds() : d.within_bounds();
    std::cerr << d.fields.size() << " differing fields; " << (ok ? "within bounds" : "outside bounds") << '\n';
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Forward-backward SDE control toolkit: simulate, solve and verify"};
    app.require_subcommand(1);

    CommonArgs sim_a, bsde_a, adj_a, ver_a, orc_a;

    auto* sim = app.add_subcommand("simulate", "simulate the controlled state and write the paths");
    sim_a.add(sim);
    bool binary = false;
    sim->add_flag("--binary", binary, "write paths.bin instead of paths.csv");

    auto* sb = app.add_subcommand("solve-bsdep", "solve the backward equation by regression");
    bsde_a.add(sb);
    std::vector<double> candidates;
    sb->add_option("--candidates", candidates, "constant controls for the value estimate")->delimiter(',');

    auto* sa = app.add_subcommand("solve-adjoint", "solve the first- and second-order adjoint equations");
    adj_a.add(sa);
    bool dual = false;
    sa->add_flag("--dual", dual, "also solve the dual system");

    auto* ver = app.add_subcommand("verify", "run verifications and write a report");
    ver->alias("run");
    ver_a.add(ver);
    std::vector<std::string> verify;
    bool quiet = false;
    ver->add_option("--verify", verify,
                    "hjb, adjoint, relations, mp, jets, moments, stability or all (comma separated)");
    ver->add_flag("-q,--quiet", quiet, "no summary on stdout");

    auto* orc = app.add_subcommand("oracle", "nested-quadrature value of constant controls");
    orc_a.add(orc);
    std::vector<double> us;
    fixtures::OracleSpec os;
    orc->add_option("--u", us, "constant controls")->delimiter(',')->required();
    orc->add_option("--depth", os.steps, "tree depth (1..4)");
    orc->add_option("--hermite", os.hermite, "Gauss-Hermite nodes per step");
    orc->add_option("--max-jumps", os.max_jumps, "jump-count truncation");

    auto* df = app.add_subcommand("diff", "compare two reports field by field");
    std::string da, db, dcsv;
    bool mc_only = false;
    df->add_option("a", da)->required()->check(CLI::ExistingFile);
    df->add_option("b", db)->required()->check(CLI::ExistingFile);
    df->add_option("--csv", dcsv, "write the differences as CSV");
    df->add_flag("--mc-only", mc_only, "only stderr-bounded fields decide the exit status");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : exit_config;
    }

    try {
        if (*sim) return cmd_simulate(sim_a, binary);
        if (*sb) return cmd_solve_bsdep(bsde_a, candidates);
        if (*sa) return cmd_solve_adjoint(adj_a, dual);
        if (*ver) return cmd_verify(ver_a, verify, quiet);
        if (*orc) return cmd_oracle(orc_a, us, os);
        if (*df) return cmd_diff(da, db, dcsv, mc_only);
    } catch (const PipelineFailure& e) {
        std::cerr << "pipeline error: " << e.what() << '\n';
        return exit_pipeline;
    } catch (const model::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const model::ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return exit_config;
    } catch (const model::DomainError& e) {
        std::cerr << "domain error: " << e.what() << '\n';
        return exit_config;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_pipeline;
    }
    return 0;
}

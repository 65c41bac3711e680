#pragma once

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <functional>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "fbsdep/adjoint/relations.hpp"
#include "fbsdep/adjoint/solve.hpp"
#include "fbsdep/bsde/solver.hpp"
#include "fbsdep/hjb/checks.hpp"
#include "fbsdep/hjb/jets.hpp"
#include "fbsdep/model/assumptions.hpp"
#include "fbsdep/pathsim/moments.hpp"
#include "fbsdep/report/config.hpp"

namespace fbsdep::report {

enum class Status { pass, fail, inconclusive, error };

inline const char* status_name(Status s) {
    switch (s) {
        case Status::pass: return "PASS";
        case Status::fail: return "FAIL";
        case Status::inconclusive: return "INCONCLUSIVE";
        case Status::error: return "ERROR";
    }
    return "?";
}

/// Plot-ready table written as a CSV sidecar.
struct Table {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

struct Check {
    std::string name;
    std::string anchor;  // which relation the check exercises
    Status status = Status::inconclusive;
    json metrics = json::object();
    json tolerances = json::object();
    std::vector<std::string> ledger_refs;
    std::string note;
    double runtime = 0.0;  // seconds; lives in the excluded timestamp block
    std::vector<Table> tables;
};

struct VerificationReport {
    RunConfig config;
    json source = json::object();
    std::vector<Check> checks;
    json claims = json::array();
    json ledger = json::array();
    bool pipeline_error = false;
    std::string generated_at;

    bool any_fail() const {
        for (const auto& c : checks)
            if (c.status == Status::fail) return true;
        return false;
    }
    /// 0: no FAIL, 1: some FAIL, 3: a pipeline error.
    int exit_code() const { return pipeline_error ? 3 : any_fail() ? 1 : 0; }
    std::string overall() const { return pipeline_error ? "ERROR" : any_fail() ? "FAIL" : "PASS"; }

    json to_json() const {
        json j;
        j["schema_version"] = schema_version;
        j["status"] = overall();
        j["config"] = report::to_json(config);
        j["source"] = source;
        j["checks"] = json::array();
        json runtimes = json::object();
        for (const auto& c : checks) {
            json cj;
            cj["name"] = c.name;
            cj["anchor"] = c.anchor;
            cj["status"] = status_name(c.status);
            cj["seed"] = config.seed ? json(*config.seed) : json(nullptr);
            cj["metrics"] = c.metrics;
            cj["tolerances"] = c.tolerances;
            cj["ledger_refs"] = c.ledger_refs;
            cj["note"] = c.note;
            json tables = json::array();
            for (const auto& t : c.tables) tables.push_back(t.name + ".csv");
            cj["tables"] = tables;
            j["checks"].push_back(cj);
            runtimes[c.name] = c.runtime;
        }
        j["claims"] = claims;
        j["ledger"] = ledger;
        j["timestamp"] = {{"generated_at", generated_at}, {"runtime_seconds", runtimes}};
        return j;
    }
};

namespace detail {

inline std::vector<double> linspace(double a, double b, int n) {
    std::vector<double> v;
    for (int i = 0; i < n; ++i) v.push_back(n == 1 ? a : a + (b - a) * i / (n - 1));
    return v;
}

/// Lazily built trajectory, adjoints and dual system shared by the checks.
class Pipeline {
public:
    Pipeline(const Scenario& sc, const RunConfig& cfg) : sc_(sc), cfg_(cfg) {}

    const pathsim::PathBatch& batch() {
        if (!pb_) {
            const pathsim::TimeGrid grid(sc_.spec.t0, sc_.spec.T, cfg_.steps);
            const auto noise = pathsim::sample_noise(grid, sc_.spec.jumps, cfg_.batch, *cfg_.seed);
            pb_ = std::make_unique<pathsim::PathBatch>(pathsim::simulate_batch(sc_.spec, sc_.policy, sc_.x0, noise));
            if (pb_->invalid_count() == pb_->M) throw model::DomainError("every path is invalid: " + pb_->first_failure);
        }
        return *pb_;
    }
    const adjoint::Trajectory& trajectory() {
        if (!tr_) {
            const auto& pb = batch();
            bsde::BackwardOptions bo;
            bo.refine = cfg_.refine;
            tr_ = std::make_unique<adjoint::Trajectory>(
                adjoint::Trajectory{&pb, bsde::solve_backward(sc_.spec, pb, sc_.profile.basis, bo)});
        }
        return *tr_;
    }
    adjoint::AdjointOptions options(int degree = -1) const {
        adjoint::AdjointOptions o;
        o.basis = sc_.profile.basis;
        if (degree >= 0) o.basis.degree = degree;
        o.backward.refine = cfg_.refine;
        return o;
    }
    const adjoint::AdjointField& first() {
        if (!first_) first_ = std::make_unique<adjoint::AdjointField>(adjoint::solve_first_order(coefficients(), trajectory(), options()));
        return *first_;
    }
    const adjoint::AdjointField& second() {
        if (!second_)
            second_ = std::make_unique<adjoint::AdjointField>(
                adjoint::solve_second_order(coefficients(), trajectory(), first(), options()));
        return *second_;
    }
    const adjoint::DualSystem& dual() {
        if (!dual_)
            dual_ = std::make_unique<adjoint::DualSystem>(
                adjoint::solve_dual(coefficients(), trajectory(), options(sc_.profile.dual_degree)));
        return *dual_;
    }
    // built on first use: scalar state only
    const adjoint::CoefficientSet& coefficients() {
        if (!cs_) cs_.emplace(sc_.spec);
        return *cs_;
    }

    /// Keeps samples on x0's side of the profile's branch point.
    std::function<bool(int, std::size_t)> on_branch() {
        if (!sc_.profile.branch_point) return {};
        const double bp = *sc_.profile.branch_point;
        const bool above = sc_.x0[0] > bp;
        const auto* pb = &batch();
        return [pb, bp, above](int k, std::size_t i) { return (pb->x(k, i) > bp) == above; };
    }

private:
    const Scenario& sc_;
    const RunConfig& cfg_;
    std::optional<adjoint::CoefficientSet> cs_;
    std::unique_ptr<pathsim::PathBatch> pb_;
    std::unique_ptr<adjoint::Trajectory> tr_;
    std::unique_ptr<adjoint::AdjointField> first_, second_;
    std::unique_ptr<adjoint::DualSystem> dual_;
};

/// Recomputed value of a stated claim that failed and carries a ledger entry.
inline std::optional<double> ledgered(const Scenario& sc, const std::string& claim_id,
                                      const std::vector<fixtures::ClaimResult>& claims) {
    if (!sc.fixture) return std::nullopt;
    for (const auto& c : claims)
        if (c.id == claim_id && !c.outcome.holds && c.ledger) return c.outcome.recomputed;
    return std::nullopt;
}

inline double clean(double v) { return std::isfinite(v) ? v : std::numeric_limits<double>::quiet_NaN(); }

inline Check validation_check(const Scenario& sc) {
    Check c;
    c.name = "validation";
    c.anchor = "problem-data";
    model::AssumptionOptions ao;
    ao.x_center = sc.x0[0];
    ao.x_lower = sc.spec.state_floor;
    const auto rep = model::validate_assumptions(sc.spec, ao);
    c.metrics["state_dim"] = sc.spec.n;
    c.metrics["control_dim"] = sc.spec.k;
    c.metrics["marks"] = sc.spec.jumps.mark_count();
    c.metrics["assumption_flags"] = rep.violations();
    c.status = Status::pass;
    c.note = rep.ok() ? "coefficients pass the growth and Lipschitz screen"
                      : "screen flags are informational; the heuristic sees unbounded ratios on growing boxes";
    return c;
}

inline Check ledger_check(const Scenario& sc, const std::vector<fixtures::ClaimResult>& claims) {
    Check c;
    c.name = "ledger";
    c.anchor = "stated-claims";
    std::size_t failing = 0, unledgered = 0, spurious = 0;
    Table t{"claims", {"index", "holds", "stated", "recomputed", "ledgered"}, {}};
    for (std::size_t i = 0; i < claims.size(); ++i) {
        const auto& r = claims[i];
        if (!r.outcome.holds) {
            ++failing;
            if (!r.ledger) ++unledgered;
            else c.ledger_refs.push_back(r.id);
        } else if (r.ledger) {
            ++spurious;
        }
        t.rows.push_back({static_cast<double>(i), r.outcome.holds ? 1.0 : 0.0, clean(r.outcome.stated),
                          clean(r.outcome.recomputed), r.ledger ? 1.0 : 0.0});
    }
    for (const auto& e : sc.fixture->ledger) {
        bool known = false;
        for (const auto& r : claims) known = known || r.id == e.claim_id;
        if (!known) ++spurious;
    }
    c.metrics["claims"] = claims.size();
    c.metrics["failing"] = failing;
    c.metrics["unledgered"] = unledgered;
    c.metrics["stale_entries"] = spurious;
    c.status = unledgered == 0 && spurious == 0 ? Status::pass : Status::fail;
    c.note = "every failing stated claim needs exactly one ledger entry";
    c.tables.push_back(std::move(t));
    return c;
}

inline std::vector<Check> hjb_checks(const Scenario& sc, const RunConfig& cfg,
                                     const std::vector<fixtures::ClaimResult>& claims) {
    const hjb::ScalarProblem pr(sc.spec);
    const auto& V = *sc.value;
    const auto ts = linspace(sc.spec.t0, sc.spec.T, 50);
    const auto xs = linspace(sc.profile.hjb_x_lo, sc.profile.hjb_x_hi, 50);
    const auto field = hjb::hjb_residual(pr, V, ts, xs);
    const double tol = cfg.tol("hjb");
    const auto& grid = sc.spec.controls.grid();
    const double step = grid.size() > 1 ? grid[1][0] - grid[0][0] : 0.0;

    Check res;
    res.name = "hjb-residual";
    res.anchor = "hjb-generator";
    Check arg;
    arg.name = "hjb-argmax";
    arg.anchor = "hjb-generator";
    Table t{"hjb_residual", {"t", "x", "v_t", "sup_G", "residual", "gap_bound", "argmax", "policy", "shortfall"}, {}};

    const auto expected = ledgered(sc, "hjb-solution", claims);
    const auto expected_u = ledgered(sc, "optimal-control", claims);
    double excess = 0, excess_expected = 0, shortfall = 0, dist = 0, dist_expected = 0;
    for (const auto& p : field.points) {
        if (!p.error.empty()) continue;
        excess = std::max(excess, std::abs(p.residual) - p.gap_bound);
        if (expected) excess_expected = std::max(excess_expected, std::abs(p.residual - *expected) - p.gap_bound);
        model::Point at;
        at.s() = p.t;
        at.x(0) = p.x;
        bool moved = false;
        const auto u = sc.stated_policy.value_or(sc.policy).value(0, at, sc.spec.controls, moved);
        const auto d = V.derivatives(p.t, p.x);
        const double short_by = p.sup_G - hjb::eval_G(pr, V, d, p.t, p.x, u);
        shortfall = std::max(shortfall, short_by - p.gap_bound);
        dist = std::max(dist, std::abs(p.argmax[0] - u[0]));
        if (expected_u) dist_expected = std::max(dist_expected, std::abs(p.argmax[0] - *expected_u));
        t.rows.push_back({p.t, p.x, p.v_t, p.sup_G, p.residual, p.gap_bound, p.argmax[0], u[0], short_by});
    }
    res.metrics["points"] = field.points.size();
    res.metrics["domain_errors"] = field.errors;
    res.metrics["max_abs_residual"] = field.max_abs_residual();
    res.metrics["max_excess_over_gap"] = excess;
    res.tolerances["residual"] = tol;
    if (field.errors > 0) {
        res.status = Status::fail;
        res.note = "grid points outside the value's domain";
    } else if (expected && excess > tol) {
        res.metrics["ledgered_residual"] = *expected;
        res.metrics["max_excess_over_ledgered"] = excess_expected;
        res.ledger_refs.push_back("hjb-solution");
        res.status = excess_expected <= tol ? Status::pass : Status::fail;
        res.note = "stated candidate is not a solution; the check pins the ledgered residual";
    } else {
        res.status = excess <= tol ? Status::pass : Status::fail;
    }

    arg.metrics["max_policy_shortfall"] = shortfall;
    arg.metrics["max_argmax_distance"] = dist;
    arg.metrics["grid_step"] = step;
    arg.tolerances["shortfall"] = tol;
    if (expected_u && shortfall > tol) {
        arg.metrics["ledgered_control"] = *expected_u;
        arg.metrics["max_distance_to_ledgered"] = dist_expected;
        arg.ledger_refs.push_back("optimal-control");
        arg.status = dist_expected <= step + 1e-12 ? Status::pass : Status::fail;
        arg.note = "stated control does not attain the maximum; the argmax is compared with the ledgered control";
    } else {
        arg.status = shortfall <= tol ? Status::pass : Status::fail;
        arg.note = arg.status == Status::pass ? "the candidate control attains the grid maximum of G"
                                              : "the candidate control falls short of the grid maximum of G";
    }

    Check term;
    term.name = "hjb-terminal";
    term.anchor = "terminal-condition";
    term.metrics["max_mismatch"] = field.max_terminal_mismatch();
    term.tolerances["mismatch"] = cfg.tol("closed-form");
    term.status = field.max_terminal_mismatch() <= cfg.tol("closed-form") ? Status::pass : Status::fail;

    res.tables.push_back(std::move(t));
    return {res, arg, term};
}

inline double eval_form(const model::CompiledExpr& e, double s, double x) {
    model::Point p;
    p.s() = s;
    p.x(0) = x;
    return e(p);
}

inline std::vector<Check> adjoint_checks(const Scenario& sc, const RunConfig& cfg, Pipeline& pl) {
    std::vector<Check> out;
    const auto& pb = pl.batch();
    const auto& first = pl.first();
    const auto& second = pl.second();
    const auto& cs = pl.coefficients();
    const int N = pb.grid.N;
    const auto rows = pb.valid_paths();

    Check term;
    term.name = "adjoint-terminal";
    term.anchor = "adjoint-terminal";
    double dp = 0, dP = 0;
    for (std::size_t i : rows) {
        const double x = pb.x(N, i);
        dp = std::max(dp, std::abs(first.fields.y(N, i) - cs.phi_x(x)));
        dP = std::max(dP, std::abs(second.fields.y(N, i) - cs.phi_xx(x)));
    }
    term.metrics["max_first_mismatch"] = dp;
    term.metrics["max_second_mismatch"] = dP;
    term.metrics["first_method"] = first.method;
    term.metrics["second_method"] = second.method;
    term.tolerances["mismatch"] = cfg.tol("closed-form");
    term.status = std::max(dp, dP) <= cfg.tol("closed-form") ? Status::pass : Status::fail;
    out.push_back(term);

    if (sc.fixture && sc.fixture->first && sc.fixture->second) {
        Check cf;
        cf.name = "adjoint-closed-form";
        cf.anchor = "first-and-second-order-adjoints";
        const auto& fx = *sc.fixture;
        const model::CompiledExpr fy(fx.first->y), fz(fx.first->z), fzt(fx.first->zt), sy(fx.second->y),
            sz(fx.second->z), szt(fx.second->zt);
        Table t{"adjoint_nodes", {"step", "s", "p_rmse", "q_rmse", "qt_rmse", "P_rmse", "Q_rmse", "Qt_rmse"}, {}};
        std::array<double, 6> worst{};
        const auto keep = pl.on_branch();
        std::size_t used = 0, off = 0;
        for (int k = 0; k <= N; ++k) {
            const double s = pb.grid.node(k);
            std::array<double, 6> se{};
            std::size_t n = 0;
            for (std::size_t i : rows) {
                if (keep && !keep(k, i)) {
                    ++off;
                    continue;
                }
                ++n;
                const double x = pb.x(k, i);
                se[0] += std::pow(first.fields.y(k, i) - eval_form(fy, s, x), 2);
                se[3] += std::pow(second.fields.y(k, i) - eval_form(sy, s, x), 2);
                if (k == N) continue;
                se[1] += std::pow(first.fields.z(k, i) - eval_form(fz, s, x), 2);
                se[2] += std::pow(first.fields.zt(k, i, 0) - eval_form(fzt, s, x), 2);
                se[4] += std::pow(second.fields.z(k, i) - eval_form(sz, s, x), 2);
                se[5] += std::pow(second.fields.zt(k, i, 0) - eval_form(szt, s, x), 2);
            }
            std::vector<double> row{static_cast<double>(k), s};
            for (std::size_t c = 0; c < 6; ++c) {
                const bool has = k < N || c == 0 || c == 3;
                const double r = has && n ? std::sqrt(se[c] / static_cast<double>(n)) : std::nan("");
                if (has) worst[c] = std::max(worst[c], r);
                row.push_back(r);
            }
            t.rows.push_back(std::move(row));
            used += n;
        }
        const char* names[] = {"p", "q", "qt", "P", "Q", "Qt"};
        double w = 0;
        for (std::size_t c = 0; c < 6; ++c) {
            cf.metrics[std::string("max_node_rmse_") + names[c]] = worst[c];
            w = std::max(w, worst[c]);
        }
        cf.metrics["samples"] = used;
        cf.metrics["off_branch"] = off;
        cf.tolerances["node_rmse"] = cfg.tol("adjoint");
        cf.status = w <= cfg.tol("adjoint") ? Status::pass : Status::fail;
        cf.note = std::string("closed forms are ") + fixtures::source_name(fx.adjoint_source);
        if (static_cast<double>(off) > 0.2 * static_cast<double>(used + off)) {
            cf.status = Status::inconclusive;
            cf.note += "; more than a fifth of the samples crossed the branch point";
        }
        cf.tables.push_back(std::move(t));
        out.push_back(cf);
    }

    if (sc.value) {
        Check sm;
        sm.name = "value-relations";
        sm.anchor = "adjoint-value-derivatives";
        hjb::SmoothRelationOptions so;
        so.include = pl.on_branch();
        const auto r =
            hjb::check_smooth_relations(hjb::ScalarProblem(sc.spec), pl.trajectory(), first, second, *sc.value, so);
        sm.metrics["p_plus_Vx"] = r.p_residual;
        sm.metrics["q_plus_Vxx_sigma"] = r.q_residual;
        sm.metrics["qt_plus_Vx_shift"] = r.qt_residual;
        sm.metrics["gap_min"] = clean(r.gap_min);
        sm.metrics["gap_max_abs"] = r.gap_max_abs;
        sm.metrics["gap_positive_fraction"] = r.gap_positive_fraction;
        sm.metrics["gap_nonneg_fraction"] = r.gap_nonneg_fraction;
        sm.metrics["flipped_positive_fraction"] = r.flipped_positive_fraction;
        sm.metrics["stationarity_residual"] = r.stationarity_residual;
        sm.metrics["sup_gap"] = r.sup_gap;
        sm.metrics["samples"] = r.samples;
        sm.metrics["excluded"] = r.excluded;
        sm.tolerances["residual"] = cfg.tol("smooth");
        sm.tolerances["gap_fraction"] = cfg.tol("gap-fraction");
        const bool first_ok = std::max({r.p_residual, r.q_residual, r.qt_residual}) <= cfg.tol("smooth");
        const bool gap_ok = r.gap_nonneg_fraction >= cfg.tol("gap-fraction");
        if (r.inconclusive) {
            sm.status = Status::inconclusive;
            sm.note = "more than a fifth of the samples sit on a breakpoint of the value or across it";
        } else {
            sm.status = first_ok && gap_ok ? Status::pass : Status::fail;
        }
        out.push_back(sm);
    }
    return out;
}

inline Check relations_check(const RunConfig& cfg, Pipeline& pl) {
    Check c;
    c.name = "dual-relations";
    c.anchor = "dual-adjoint-relations";
    const auto& dual = pl.dual();
    const auto rep = adjoint::check_relations(pl.coefficients(), pl.trajectory(), pl.first(), pl.second(), dual,
                                              cfg.tol("relations"));
    Table t{"relations", {"index", "pooled", "worst_node", "worst_step"}, {}};
    json names = json::array();
    for (std::size_t i = 0; i < rep.entries.size(); ++i) {
        const auto& e = rep.entries[i];
        c.metrics["pooled_" + e.name] = e.pooled;
        names.push_back(e.name);
        t.rows.push_back({static_cast<double>(i), e.pooled, e.worst_node, static_cast<double>(e.worst_step)});
    }
    c.metrics["relations"] = names;
    c.metrics["nonpositive_jump_factors"] = dual.nonpositive_jump_factors;
    c.tolerances["pooled"] = cfg.tol("relations");
    c.status = rep.pass() ? Status::pass : Status::fail;
    for (const auto& n : rep.notes) c.note += (c.note.empty() ? "" : " ") + n;
    c.tables.push_back(std::move(t));
    return c;
}

inline Check mp_check(const Scenario& sc, const RunConfig& cfg, Pipeline& pl,
                      const std::vector<fixtures::ClaimResult>& claims) {
    Check c;
    c.name = "maximum-condition";
    c.anchor = "hamiltonian-maximum";
    hjb::MPOptions mo;
    mo.epsilon_factor = cfg.tol("mp");
    const auto r = hjb::check_maximum_condition(hjb::ScalarProblem(sc.spec), pl.trajectory(), pl.first(), pl.second(), mo);
    c.metrics["samples"] = r.samples;
    c.metrics["quantile"] = r.quantile;
    c.metrics["q_low_min_orientation"] = r.q_low;
    c.metrics["q_low_max_orientation"] = r.q_low_reversed;
    c.metrics["rms_H"] = r.rms_H;
    c.metrics["epsilon"] = r.epsilon;
    c.metrics["fraction_below"] = r.fraction_below;
    c.tolerances["epsilon_factor"] = cfg.tol("mp");
    if (ledgered(sc, "optimal-control", claims)) c.ledger_refs.push_back("optimal-control");
    if (r.q_low_reversed >= -r.epsilon) {
        c.status = Status::pass;
        c.note = "the trajectory control maximizes H up to epsilon at the quantile";
    } else {
        c.status = Status::inconclusive;
        c.note = "regression noise in Z and Z-tilde can push H off its maximum; not decisive";
    }
    return c;
}

inline Check jets_check(const Scenario& sc, const RunConfig& cfg, Pipeline& pl,
                        const std::vector<fixtures::ClaimResult>& claims) {
    Check c;
    c.name = "jet-inclusions";
    c.anchor = "semijet-inclusions";
    hjb::JetOptions jo;
    jo.include = pl.on_branch();
    const auto r = hjb::check_jet_inclusions(hjb::ScalarProblem(sc.spec), pl.trajectory(), pl.first(), pl.second(),
                                             *sc.value, jo);
    auto put = [&](const std::string& key, const hjb::JetCounts& j) {
        c.metrics[key + "_member"] = j.member;
        c.metrics[key + "_non_member"] = j.non_member;
        c.metrics[key + "_inconclusive"] = j.inconclusive;
        c.metrics[key + "_pass_rate"] = j.pass_rate();
    };
    c.metrics["pairs"] = r.pairs;
    put("x_super", r.x_super);
    put("t_super", r.t_super);
    put("joint_super", r.joint_super);
    put("x_sub", r.x_sub);
    c.metrics["subjet_vacuous"] = r.subjet_vacuous;
    c.metrics["max_form_diff"] = r.max_form_diff;
    const double rate = cfg.tol("jets");
    c.tolerances["pass_rate"] = rate;
    c.tolerances["form_diff"] = 1e-9;
    const bool ok = r.x_super.pass_rate() >= rate && r.t_super.pass_rate() >= rate &&
                    r.joint_super.pass_rate() >= rate && r.max_form_diff <= 1e-9;
    c.status = ok ? Status::pass : Status::fail;
    if (!ok && ledgered(sc, "hjb-solution", claims)) {
        // the inclusions presuppose that V is the value function
        c.status = Status::inconclusive;
        c.ledger_refs.push_back("hjb-solution");
        c.note = "the stated candidate is ledgered as not solving the HJB equation";
    }
    return c;
}

inline Check moments_check(const Scenario& sc, const RunConfig& cfg) {
    Check c;
    c.name = "moment-rate";
    c.anchor = "state-moment-bound";
    pathsim::MomentOptions mo;
    mo.batch = cfg.batch;
    mo.seed = *cfg.seed;
    mo.steps = cfg.steps;
    mo.slope_slack = cfg.tol("moments");
    const auto r = pathsim::check_moment_estimates(sc.spec, sc.policy, {sc.x0[0]}, sc.profile.moment_horizons, {2}, mo);
    const auto& row = r.rows.at(0);
    c.metrics["k"] = row.k;
    c.metrics["horizons"] = row.horizons;
    c.metrics["moments"] = row.moments;
    c.metrics["slope"] = row.slope;
    c.metrics["slope_stderr"] = row.slope_stderr;
    c.metrics["threshold"] = row.threshold;
    c.metrics["vacuous"] = row.vacuous;
    c.metrics["excluded"] = row.excluded;
    c.tolerances["slope_slack"] = cfg.tol("moments");
    c.status = r.pass() ? Status::pass : Status::fail;
    Table t{"moments", {"horizon", "moment", "stderr"}, {}};
    for (std::size_t h = 0; h < row.horizons.size(); ++h) t.rows.push_back({row.horizons[h], row.moments[h], row.stderrs[h]});
    c.tables.push_back(std::move(t));
    return c;
}

inline Check stability_check(const Scenario& sc, const RunConfig& cfg) {
    Check c;
    c.name = "stability";
    c.anchor = "backward-stability-estimate";
    bsde::StabilityOptions so;
    so.batch = cfg.batch;
    so.seed = *cfg.seed;
    so.steps = cfg.steps;
    so.basis = sc.profile.basis;
    so.slack = cfg.tol("stability");
    const auto zero = model::lit(0.0), shift = model::lit(0.1);
    const auto a = bsde::check_stability_estimate(sc.spec, sc.policy, sc.x0, zero, shift, zero, zero, so);
    const auto b = bsde::check_stability_estimate(sc.spec, sc.policy, sc.x0, zero, zero, zero, shift, so);
    c.metrics["lipschitz"] = a.lipschitz;
    c.metrics["beta"] = a.beta;
    c.metrics["terminal_shift_lhs"] = a.lhs;
    c.metrics["terminal_shift_rhs"] = a.rhs;
    c.metrics["driver_shift_lhs"] = b.lhs;
    c.metrics["driver_shift_rhs"] = b.rhs;
    c.tolerances["slack"] = cfg.tol("stability");
    c.status = a.pass && b.pass ? Status::pass : Status::fail;
    c.note = "perturbations: phi + 0.1 and g + 0.1";
    return c;
}

inline Check cost_check(Pipeline& pl) {
    Check c;
    c.name = "cost";
    c.anchor = "cost-functional";
    const auto& tr = pl.trajectory();
    const auto J = bsde::cost_functional(tr.solution);
    c.metrics["J"] = J.J;
    c.metrics["J_stderr"] = J.stderr;
    c.metrics["invalid_paths"] = tr.pb().invalid_count();
    c.metrics["projections"] = tr.pb().projections;
    c.status = std::isfinite(J.J) ? Status::pass : Status::fail;
    return c;
}

template <class Fn>
void timed(VerificationReport& rep, const std::string& name, const std::string& anchor, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Check> made;
    try {
        made = fn();
    } catch (const std::exception& e) {
        Check c;
        c.name = name;
        c.anchor = anchor;
        c.status = Status::error;
        c.note = e.what();
        made = {c};
        rep.pipeline_error = true;
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (auto& c : made) {
        c.runtime = dt / static_cast<double>(made.size());
        rep.checks.push_back(std::move(c));
    }
}

inline Check not_applicable(const std::string& name, const std::string& anchor, const std::string& why) {
    Check c;
    c.name = name;
    c.anchor = anchor;
    c.status = Status::inconclusive;
    c.note = "not applicable: " + why;
    return c;
}

inline std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

}  // namespace detail

/// Runs the selected verifications. Config errors throw model::ConfigError;
/// failures inside a pipeline are recorded as ERROR checks.
inline VerificationReport run(const RunConfig& cfg) {
    validate(cfg);
    const Scenario sc = load_source(cfg);
    VerificationReport rep;
    rep.config = cfg;
    rep.generated_at = detail::utc_now();
    rep.source = {{"name", sc.name},
                  {"kind", sc.kind},
                  {"x0", sc.x0},
                  {"policy", sc.policy_text},
                  {"value", sc.value ? json(sc.value->expr().str()) : json(nullptr)}};

    std::vector<fixtures::ClaimResult> claims;
    if (sc.fixture) {
        claims = fixtures::evaluate_claims(*sc.fixture);
        for (const auto& c : claims)
            rep.claims.push_back({{"id", c.id},
                                  {"source", fixtures::source_name(c.source)},
                                  {"holds", c.outcome.holds},
                                  {"stated", detail::clean(c.outcome.stated)},
                                  {"recomputed", detail::clean(c.outcome.recomputed)},
                                  {"detail", c.outcome.detail},
                                  {"ledgered", c.ledger != nullptr}});
        for (const auto& e : sc.fixture->ledger)
            rep.ledger.push_back({{"claim", e.claim_id},
                                  {"stated", e.stated},
                                  {"recomputed", e.recomputed},
                                  {"resolution", e.resolution}});
    }

    detail::timed(rep, "validation", "problem-data", [&] { return std::vector<Check>{detail::validation_check(sc)}; });
    if (sc.fixture)
        detail::timed(rep, "ledger", "stated-claims", [&] { return std::vector<Check>{detail::ledger_check(sc, claims)}; });

    const bool scalar = sc.spec.n == 1;
    detail::Pipeline pl(sc, cfg);
    const bool needs_trajectory = cfg.selected("adjoint") || cfg.selected("relations") || cfg.selected("mp") ||
                                  cfg.selected("jets");
    if (needs_trajectory && scalar)
        detail::timed(rep, "cost", "cost-functional", [&] { return std::vector<Check>{detail::cost_check(pl)}; });

    auto scalar_only = [&](const std::string& sel, const std::string& name, const std::string& anchor, bool need_value,
                           auto&& fn) {
        if (!cfg.selected(sel)) return;
        if (!scalar) {
            rep.checks.push_back(detail::not_applicable(name, anchor, "scalar state only"));
            return;
        }
        if (need_value && !sc.value) {
            rep.checks.push_back(detail::not_applicable(name, anchor, "no candidate value function"));
            return;
        }
        detail::timed(rep, name, anchor, fn);
    };
    scalar_only("hjb", "hjb-residual", "hjb-generator", true, [&] { return detail::hjb_checks(sc, cfg, claims); });
    scalar_only("adjoint", "adjoint-terminal", "adjoint-terminal", false,
                [&] { return detail::adjoint_checks(sc, cfg, pl); });
    scalar_only("relations", "dual-relations", "dual-adjoint-relations", false,
                [&] { return std::vector<Check>{detail::relations_check(cfg, pl)}; });
    scalar_only("mp", "maximum-condition", "hamiltonian-maximum", false,
                [&] { return std::vector<Check>{detail::mp_check(sc, cfg, pl, claims)}; });
    scalar_only("jets", "jet-inclusions", "semijet-inclusions", true,
                [&] { return std::vector<Check>{detail::jets_check(sc, cfg, pl, claims)}; });
    scalar_only("moments", "moment-rate", "state-moment-bound", false,
                [&] { return std::vector<Check>{detail::moments_check(sc, cfg)}; });
    if (cfg.selected("stability"))
        detail::timed(rep, "stability", "backward-stability-estimate",
                      [&] { return std::vector<Check>{detail::stability_check(sc, cfg)}; });
    return rep;
}

namespace detail {

inline std::string csv_num(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string scalar_text(const json& v) {
    if (v.is_number_float()) return csv_num(v.get<double>());
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

}  // namespace detail

inline void write_table(std::ostream& os, const Table& t) {
    for (std::size_t c = 0; c < t.columns.size(); ++c) os << (c ? "," : "") << t.columns[c];
    os << '\n';
    for (const auto& r : t.rows) {
        for (std::size_t c = 0; c < r.size(); ++c) os << (c ? "," : "") << detail::csv_num(r[c]);
        os << '\n';
    }
}

/// One line per scalar metric.
inline void write_checks_csv(std::ostream& os, const VerificationReport& rep) {
    os << "check,status,metric,value\n";
    for (const auto& c : rep.checks)
        for (const auto& [k, v] : c.metrics.items())
            if (!v.is_array() && !v.is_object())
                os << c.name << ',' << status_name(c.status) << ',' << k << ',' << detail::scalar_text(v) << '\n';
}

inline void write_summary(std::ostream& os, const VerificationReport& rep) {
    os << "source   " << rep.source["name"].get<std::string>() << " (" << rep.source["kind"].get<std::string>()
       << ")\n";
    os << "seed     " << *rep.config.seed << "   steps " << rep.config.steps << "   batch " << rep.config.batch << '\n';
    os << "status   " << rep.overall() << "\n\n";
    for (const auto& c : rep.checks) {
        char line[64];
        std::snprintf(line, sizeof line, "%-13s %-22s", status_name(c.status), c.name.c_str());
        os << line;
        if (!c.ledger_refs.empty()) {
            os << " ledger:";
            for (const auto& r : c.ledger_refs) os << ' ' << r;
        }
        os << '\n';
        if (!c.note.empty()) os << "              " << c.note << '\n';
    }
    if (!rep.ledger.empty()) {
        os << "\nledger\n";
        for (const auto& e : rep.ledger)
            os << "  " << e["claim"].get<std::string>() << ": " << e["resolution"].get<std::string>() << '\n';
    }
}

/// report.json, checks.csv, summary.txt and one CSV per table.
inline void write_outputs(const VerificationReport& rep, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir / "report.json");
        os << rep.to_json().dump(2) << '\n';
    }
    {
        std::ofstream os(dir / "checks.csv");
        write_checks_csv(os, rep);
    }
    {
        std::ofstream os(dir / "summary.txt");
        write_summary(os, rep);
    }
    for (const auto& c : rep.checks)
        for (const auto& t : c.tables) {
            std::ofstream os(dir / (t.name + ".csv"));
            write_table(os, t);
        }
}

/// Numeric difference of one field. `bound` is 4 combined standard errors
/// when the field has a sibling "<name>_stderr", otherwise 0 (exact match).
struct FieldDiff {
    std::string path;
    json a, b;
    double delta = std::numeric_limits<double>::quiet_NaN();
    double bound = 0.0;
    bool within = false;
};

struct ReportDiff {
    std::vector<FieldDiff> fields;
    bool empty() const { return fields.empty(); }
    /// every differing field is within its bound
    bool within_bounds() const {
        for (const auto& f : fields)
            if (!f.within) return false;
        return true;
    }
    /// only the stderr-bounded fields count; for runs that differ on
    /// purpose (seed, steps)
    bool mc_within_bounds() const {
        for (const auto& f : fields)
            if (f.bound > 0 && !f.within) return false;
        return true;
    }
    json to_json() const {
        json j = json::array();
        for (const auto& f : fields)
            j.push_back({{"path", f.path},
                         {"a", f.a},
                         {"b", f.b},
                         {"delta", detail::clean(f.delta)},
                         {"bound", f.bound},
                         {"within", f.within}});
        return j;
    }
};

namespace detail {

inline void diff_walk(const json& a, const json& b, const std::string& path, const json* pa, const json* pb,
                      const std::string& key, ReportDiff& out) {
    if (a.is_object() && b.is_object()) {
        for (const auto& [k, v] : a.items()) {
            const std::string p = path + "/" + k;
            if (!b.contains(k)) {
                out.fields.push_back({p, v, json(nullptr)});
                continue;
            }
            diff_walk(v, b[k], p, &a, &b, k, out);
        }
        for (const auto& [k, v] : b.items())
            if (!a.contains(k)) out.fields.push_back({path + "/" + k, json(nullptr), v});
        return;
    }
    if (a.is_array() && b.is_array() && a.size() == b.size()) {
        for (std::size_t i = 0; i < a.size(); ++i) diff_walk(a[i], b[i], path + "/" + std::to_string(i), nullptr, nullptr, "", out);
        return;
    }
    if (a == b) return;
    FieldDiff d{path, a, b};
    if (a.is_number() && b.is_number()) {
        d.delta = b.get<double>() - a.get<double>();
        const std::string se = key + "_stderr";
        if (pa && pb && !key.empty() && pa->contains(se) && pb->contains(se) && (*pa)[se].is_number() &&
            (*pb)[se].is_number()) {
            d.bound = 4.0 * ((*pa)[se].get<double>() + (*pb)[se].get<double>());
            d.within = std::abs(d.delta) <= d.bound;
        }
    }
    out.fields.push_back(std::move(d));
}

}  // namespace detail

/// Field-wise differences of two reports, ignoring the timestamp block.
inline ReportDiff diff_reports(const json& a, const json& b) {
    const auto va = a.value("schema_version", -1), vb = b.value("schema_version", -1);
    if (va != vb || va != schema_version)
        throw model::ConfigError("schema mismatch: " + std::to_string(va) + " vs " + std::to_string(vb));
    json ca = a, cb = b;
    ca.erase("timestamp");
    cb.erase("timestamp");
    ReportDiff d;
    detail::diff_walk(ca, cb, "", nullptr, nullptr, "", d);
    return d;
}

/// path,a,b,delta,bound,within; plot-ready when the two runs differ in one
/// parameter (e.g. steps N and 2N).
inline void write_diff_csv(std::ostream& os, const ReportDiff& d) {
    os << "path,a,b,delta,bound,within\n";
    for (const auto& f : d.fields)
        os << f.path << ',' << detail::scalar_text(f.a) << ',' << detail::scalar_text(f.b) << ','
           << detail::csv_num(f.delta) << ',' << detail::csv_num(f.bound) << ',' << (f.within ? 1 : 0) << '\n';
}

}  // namespace fbsdep::report

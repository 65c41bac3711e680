#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fbsdep/bsde/regression.hpp"
#include "fbsdep/fixtures/fixture.hpp"
#include "fbsdep/pathsim/policy.hpp"

namespace fbsdep::report {

using json = nlohmann::ordered_json;

inline constexpr int schema_version = 1;

inline const std::vector<std::string>& verification_names() {
    static const std::vector<std::string> v = {"hjb", "adjoint", "relations", "mp", "jets", "moments", "stability"};
    return v;
}

/// Default tolerances by name; overrides must be positive.
inline const std::map<std::string, double>& default_tolerances() {
    static const std::map<std::string, double> t = {
        {"hjb", 1e-8},         // |residual| beyond the control-grid gap bound
        {"closed-form", 1e-10},
        {"adjoint", 0.05},     // node RMSE against closed-form adjoints
        {"smooth", 0.05},      // node RMS of p + V_x, q + V_xx sigma, ...
        {"gap-fraction", 0.95},
        {"relations", 0.1},    // pooled normalized residual
        {"jets", 0.9},         // minimum pass rate
        {"mp", 0.05},          // epsilon as a fraction of RMS H
        {"moments", 0.2},      // slope slack below k/2
        {"stability", 0.05},   // relative slack on the rhs
    };
    return t;
}

struct RunConfig {
    std::string fixture;        // one of the fixture names, or empty
    std::string scenario_path;  // informational once `scenario` is loaded
    std::optional<json> scenario;
    int steps = 64;
    std::size_t batch = 20000;
    std::optional<std::uint64_t> seed;
    std::optional<int> basis_degree;
    bool refine = true;
    std::vector<std::string> verify;
    std::string out_dir;
    std::map<std::string, double> tolerances;

    double tol(const std::string& name) const {
        const auto it = tolerances.find(name);
        return it != tolerances.end() ? it->second : default_tolerances().at(name);
    }
    bool selected(const std::string& what) const {
        return std::find(verify.begin(), verify.end(), what) != verify.end();
    }
};

/// "all" expands to every verification; duplicates are dropped and the
/// canonical order is kept.
inline std::vector<std::string> normalize_selection(const std::vector<std::string>& in) {
    std::vector<std::string> raw;
    for (const auto& item : in) {
        std::stringstream ss(item);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) raw.push_back(tok);
    }
    std::vector<std::string> out;
    for (const auto& name : verification_names())
        for (const auto& r : raw)
            if (r == name || r == "all") {
                out.push_back(name);
                break;
            }
    for (const auto& r : raw)
        if (r != "all" && std::find(verification_names().begin(), verification_names().end(), r) ==
                              verification_names().end())
            throw model::ConfigError("unknown verification '" + r + "'");
    return out;
}

inline void validate(const RunConfig& c) {
    if (c.fixture.empty() == !c.scenario.has_value())
        throw model::ConfigError("exactly one of a fixture name or a scenario file is required");
    if (!c.seed) throw model::ConfigError("a seed is required");
    if (c.steps < 1) throw model::ConfigError("steps must be positive");
    if (c.batch < 2) throw model::ConfigError("batch must be at least 2");
    if (c.basis_degree && *c.basis_degree < 0) throw model::ConfigError("basis degree must be non-negative");
    for (const auto& [k, v] : c.tolerances) {
        if (!default_tolerances().count(k)) throw model::ConfigError("unknown tolerance '" + k + "'");
        if (!(v > 0.0) || !std::isfinite(v)) throw model::ConfigError("tolerance '" + k + "' must be positive");
    }
}

inline json to_json(const RunConfig& c) {
    json j;
    j["fixture"] = c.fixture;
    j["scenario_path"] = c.scenario_path;
    j["scenario"] = c.scenario ? *c.scenario : json(nullptr);
    j["steps"] = c.steps;
    j["batch"] = c.batch;
    j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
    j["basis_degree"] = c.basis_degree ? json(*c.basis_degree) : json(nullptr);
    j["refine"] = c.refine;
    j["verify"] = c.verify;
    j["tolerances"] = json::object();
    for (const auto& [k, v] : c.tolerances) j["tolerances"][k] = v;
    return j;
}

/// Inverse of to_json; the output directory is not part of the config.
inline RunConfig config_from_json(const json& j) {
    try {
        RunConfig c;
        c.fixture = j.value("fixture", "");
        c.scenario_path = j.value("scenario_path", "");
        if (j.contains("scenario") && !j["scenario"].is_null()) c.scenario = j["scenario"];
        c.steps = j.value("steps", 64);
        c.batch = j.value("batch", std::size_t{20000});
        if (j.contains("seed") && !j["seed"].is_null()) c.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("basis_degree") && !j["basis_degree"].is_null()) c.basis_degree = j["basis_degree"].get<int>();
        c.refine = j.value("refine", true);
        if (j.contains("verify")) c.verify = normalize_selection(j["verify"].get<std::vector<std::string>>());
        if (j.contains("tolerances"))
            for (const auto& [k, v] : j["tolerances"].items()) c.tolerances[k] = v.get<double>();
        validate(c);
        return c;
    } catch (const json::exception& e) {
        throw model::ConfigError(std::string("config: ") + e.what());
    }
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw model::ConfigError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        // e.byte is 1-based; translate to line and column
        in.clear();
        in.seekg(0);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::size_t line = 1, col = 1;
        for (std::size_t b = 0; b + 1 < e.byte && b < text.size(); ++b) {
            if (text[b] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw model::ConfigError(path + ":" + std::to_string(line) + ":" + std::to_string(col) + ": invalid JSON");
    }
}

/// Per-source solver settings that the fixtures need and scenarios may set.
struct Profile {
    bsde::BasisSpec basis{};
    int dual_degree = -1;  // -1: same as basis
    double hjb_x_lo = -2.0, hjb_x_hi = 2.0;
    std::vector<double> moment_horizons{0.125, 0.25, 0.5};
    /// kink of the value: samples on the other side from x0 are left out
    /// of the comparisons with branch-wise closed forms
    std::optional<double> branch_point;
};

/// A loaded problem with its start point, trajectory policy and, when known,
/// a candidate value function.
struct Scenario {
    std::string name;
    std::string kind;  // "fixture" or "scenario"
    model::ProblemSpec spec;
    std::vector<double> x0;
    pathsim::ControlPolicy policy = pathsim::ControlPolicy::constant({0.0});  // trajectory
    std::string policy_text;
    /// candidate optimal control checked against the HJB argmax; defaults to `policy`
    std::optional<pathsim::ControlPolicy> stated_policy;
    std::optional<hjb::ValueCandidate> value;
    std::optional<fixtures::Fixture> fixture;
    Profile profile;
};

namespace detail {

struct Where {
    std::string file;
    std::string pointer;
    [[noreturn]] void fail(const std::string& what) const {
        throw model::ConfigError(file + ":" + pointer + ": " + what);
    }
};

inline model::Expr expr_at(const json& j, const Where& w) {
    if (!j.is_string()) w.fail("expected an expression string");
    try {
        return model::parse_expr(j.get<std::string>());
    } catch (const model::ParseError& e) {
        w.fail(e.what());
    }
}

inline std::vector<model::Expr> expr_list(const json& doc, const std::string& key, int n, const Where& w) {
    const Where at{w.file, w.pointer + "/" + key};
    if (!doc.contains(key)) return std::vector<model::Expr>(static_cast<std::size_t>(n), model::lit(0.0));
    const json& v = doc[key];
    if (v.is_string()) {
        if (n != 1) at.fail("expected a list of " + std::to_string(n) + " expressions");
        return {expr_at(v, at)};
    }
    if (!v.is_array() || static_cast<int>(v.size()) != n)
        at.fail("expected a list of " + std::to_string(n) + " expressions");
    std::vector<model::Expr> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(expr_at(v[i], {w.file, at.pointer + "/" + std::to_string(i)}));
    return out;
}

inline double number_at(const json& j, const Where& w) {
    if (!j.is_number()) w.fail("expected a number");
    return j.get<double>();
}

inline model::ControlSet controls_at(const json& j, const Where& w) {
    if (!j.is_object() || !j.contains("boxes")) w.fail("expected {\"boxes\": [...], \"grid_points\": n}");
    const int pts = j.contains("grid_points") ? static_cast<int>(number_at(j["grid_points"], {w.file, w.pointer + "/grid_points"}))
                                              : 101;
    std::vector<std::vector<model::Interval>> boxes;
    const json& bx = j["boxes"];
    if (!bx.is_array() || bx.empty()) w.fail("boxes must be a non-empty list");
    for (std::size_t b = 0; b < bx.size(); ++b) {
        const Where wb{w.file, w.pointer + "/boxes/" + std::to_string(b)};
        if (!bx[b].is_array()) wb.fail("a box is a list of [lo, hi] pairs");
        std::vector<model::Interval> box;
        for (const auto& iv : bx[b]) {
            if (!iv.is_array() || iv.size() != 2) wb.fail("a box is a list of [lo, hi] pairs");
            box.push_back({number_at(iv[0], wb), number_at(iv[1], wb)});
        }
        boxes.push_back(std::move(box));
    }
    try {
        return model::ControlSet(std::move(boxes), pts);
    } catch (const model::ConfigError& e) {
        w.fail(e.what());
    }
}

inline bsde::BasisSpec basis_at(const json& j, const Where& w) {
    bsde::BasisSpec b;
    if (!j.is_object()) w.fail("expected an object");
    if (j.contains("degree")) b.degree = static_cast<int>(number_at(j["degree"], {w.file, w.pointer + "/degree"}));
    if (j.contains("mark_degree"))
        b.mark_degree = static_cast<int>(number_at(j["mark_degree"], {w.file, w.pointer + "/mark_degree"}));
    if (j.contains("extra"))
        for (std::size_t i = 0; i < j["extra"].size(); ++i)
            b.extra.push_back(expr_at(j["extra"][i], {w.file, w.pointer + "/extra/" + std::to_string(i)}));
    return b;
}

/// {"constant": u | [u1, ...]} or {"feedback": expr | [expr, ...]}
inline pathsim::ControlPolicy policy_at(const json& pol, int k, const Where& wp, std::string* text) {
    if (!pol.is_object()) wp.fail("expected {\"constant\": ...} or {\"feedback\": ...}");
    if (pol.contains("constant")) {
        model::ControlSet::Vec u{};
        const json& c = pol["constant"];
        if (c.is_number()) {
            u[0] = c.get<double>();
        } else {
            if (!c.is_array() || static_cast<int>(c.size()) != k) wp.fail("constant needs k values");
            for (std::size_t j = 0; j < c.size(); ++j) u[j] = number_at(c[j], wp);
        }
        auto out = pathsim::ControlPolicy::constant(u);
        if (text) *text = out.describe();
        return out;
    }
    if (pol.contains("feedback")) {
        const auto maps = expr_list(pol, "feedback", k, wp);
        if (text)
            for (const auto& m : maps) *text += (text->empty() ? "" : "; ") + m.str();
        try {
            return pathsim::ControlPolicy::feedback(maps);
        } catch (const model::ConfigError& e) {
            wp.fail(e.what());
        }
    }
    wp.fail("expected {\"constant\": ...} or {\"feedback\": ...}");
}

inline Profile fixture_profile(const std::string& name) {
    Profile p;
    if (name == "example-5.2") {
        p.basis.degree = 1;
        p.basis.extra = {model::parse_expr("x^(-1)"), model::parse_expr("x^(-2)")};
        p.hjb_x_lo = 0.5;
        p.hjb_x_hi = 5.0;
    } else if (name == "example-5.3") {
        // p* = h p exactly; a linear dual basis keeps H* = h H tight
        p.dual_degree = 1;
        p.branch_point = 0.0;
    }
    return p;
}

}  // namespace detail

inline Scenario load_fixture(const std::string& name) {
    auto fx = fixtures::fixture_by_name(name);
    Scenario s;
    s.name = name;
    s.kind = "fixture";
    s.spec = fx.spec;
    s.x0 = {fx.x0};
    s.policy = fx.optimal_policy();
    s.stated_policy = fx.optimal_policy();
    s.policy_text = fx.policy.str();
    s.value = fx.value;
    s.profile = detail::fixture_profile(name);
    if (s.profile.branch_point) {
        // the Euler jump step does not land exactly on the kink, so the
        // trajectory keeps the start branch's control instead of the feedback
        bool moved = false;
        model::Point at;
        at.x(0) = fx.x0;
        at.s() = fx.spec.t0;
        const auto u = fx.optimal_policy().value(0, at, fx.spec.controls, moved);
        s.policy = pathsim::ControlPolicy::constant(u);
        s.policy_text = s.policy.describe() + " (feedback " + fx.policy.str() + " at x0)";
    }
    s.fixture = std::move(fx);
    return s;
}

/// Scenario document (see docs/scenario.md). `file` labels error locations.
inline Scenario load_scenario(const json& doc, const std::string& file = "scenario") {
    const detail::Where root{file, ""};
    if (!doc.is_object()) root.fail("a scenario is a JSON object");
    Scenario s;
    s.kind = "scenario";
    s.name = doc.value("name", "scenario");
    auto& p = s.spec;
    p.name = s.name;
    if (doc.contains("state_dim")) p.n = static_cast<int>(detail::number_at(doc["state_dim"], {file, "/state_dim"}));
    if (p.n < 1 || p.n > model::max_dim) root.fail("state_dim out of range");
    if (!doc.contains("controls")) root.fail("missing 'controls'");
    p.controls = detail::controls_at(doc["controls"], {file, "/controls"});
    p.k = p.controls.dim();
    p.b = detail::expr_list(doc, "b", p.n, root);
    p.sigma = detail::expr_list(doc, "sigma", p.n, root);
    p.f = detail::expr_list(doc, "f", p.n, root);
    if (doc.contains("g")) p.g = detail::expr_at(doc["g"], {file, "/g"});
    if (doc.contains("phi")) p.phi = detail::expr_at(doc["phi"], {file, "/phi"});
    if (doc.contains("jumps")) {
        const json& jm = doc["jumps"];
        const detail::Where wj{file, "/jumps"};
        if (jm.contains("intensity")) p.jumps.intensity = detail::number_at(jm["intensity"], {file, "/jumps/intensity"});
        if (jm.contains("marks")) {
            p.jumps.marks.clear();
            for (const auto& m : jm["marks"])
                p.jumps.marks.push_back({detail::number_at(m.value("value", json(0.0)), wj),
                                         detail::number_at(m.value("probability", json(1.0)), wj)});
        }
    }
    if (doc.contains("horizon")) {
        const json& h = doc["horizon"];
        if (!h.is_array() || h.size() != 2) detail::Where{file, "/horizon"}.fail("expected [t0, T]");
        p.t0 = detail::number_at(h[0], {file, "/horizon/0"});
        p.T = detail::number_at(h[1], {file, "/horizon/1"});
    }
    if (doc.contains("state_floor")) p.state_floor = detail::number_at(doc["state_floor"], {file, "/state_floor"});
    try {
        model::validate(p);
    } catch (const model::ConfigError& e) {
        root.fail(e.what());
    }

    if (!doc.contains("x0")) root.fail("missing 'x0'");
    const json& x0 = doc["x0"];
    if (x0.is_number()) {
        s.x0 = {x0.get<double>()};
    } else if (x0.is_array()) {
        for (std::size_t i = 0; i < x0.size(); ++i)
            s.x0.push_back(detail::number_at(x0[i], {file, "/x0/" + std::to_string(i)}));
    }
    if (static_cast<int>(s.x0.size()) != p.n) detail::Where{file, "/x0"}.fail("expected " + std::to_string(p.n) + " values");
    if (p.state_floor && !(s.x0[0] > *p.state_floor)) detail::Where{file, "/x0"}.fail("start lies at or below the state floor");

    if (!doc.contains("policy")) root.fail("missing 'policy'");
    s.policy = detail::policy_at(doc["policy"], p.k, {file, "/policy"}, &s.policy_text);
    if (doc.contains("optimal_policy"))
        s.stated_policy = detail::policy_at(doc["optimal_policy"], p.k, {file, "/optimal_policy"}, nullptr);

    if (doc.contains("value")) {
        if (p.n != 1) root.fail("a value candidate needs a scalar state");
        const auto V = detail::expr_at(doc["value"], {file, "/value"});
        try {
            s.value.emplace(V, doc.value("value_domain", "x in R"), p.state_floor);
        } catch (const model::ConfigError& e) {
            detail::Where{file, "/value"}.fail(e.what());
        }
    }
    if (doc.contains("basis")) s.profile.basis = detail::basis_at(doc["basis"], {file, "/basis"});
    if (doc.contains("dual_basis_degree"))
        s.profile.dual_degree = static_cast<int>(detail::number_at(doc["dual_basis_degree"], {file, "/dual_basis_degree"}));
    if (doc.contains("branch_point")) s.profile.branch_point = detail::number_at(doc["branch_point"], {file, "/branch_point"});
    if (doc.contains("hjb_x_range")) {
        const json& r = doc["hjb_x_range"];
        if (!r.is_array() || r.size() != 2) detail::Where{file, "/hjb_x_range"}.fail("expected [lo, hi]");
        s.profile.hjb_x_lo = detail::number_at(r[0], {file, "/hjb_x_range/0"});
        s.profile.hjb_x_hi = detail::number_at(r[1], {file, "/hjb_x_range/1"});
        if (!(s.profile.hjb_x_lo < s.profile.hjb_x_hi)) detail::Where{file, "/hjb_x_range"}.fail("need lo < hi");
    }
    return s;
}

/// Loads the fixture or the embedded scenario and applies the basis override.
inline Scenario load_source(const RunConfig& c) {
    Scenario s = c.fixture.empty() ? load_scenario(*c.scenario, c.scenario_path.empty() ? "scenario" : c.scenario_path)
                                   : load_fixture(c.fixture);
    if (c.basis_degree) s.profile.basis.degree = *c.basis_degree;
    return s;
}

}  // namespace fbsdep::report

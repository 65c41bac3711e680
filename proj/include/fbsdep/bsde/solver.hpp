#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "fbsdep/bsde/backward.hpp"
#include "fbsdep/model/compiled.hpp"
#include "fbsdep/pathsim/noise.hpp"
#include "fbsdep/pathsim/simulate.hpp"

namespace fbsdep::bsde {

/// Monomials of total degree <= d in n variables plus the extra functions.
inline std::size_t basis_upper_bound(const BasisSpec& basis, int n) {
    std::size_t c = 1;
    for (int i = 1; i <= n; ++i) c = c * static_cast<std::size_t>(basis.degree + i) / static_cast<std::size_t>(i);
    return c + basis.extra.size();
}

struct BackwardSolution {
    BackwardFields fields;
    /// standard error of the node-0 value: sd over paths of the realized
    /// cost phi(X_N) + sum_k g_k dt, divided by sqrt(valid paths)
    double y0_stderr = 0.0;
    std::size_t valid_paths = 0;
};

namespace detail {

/// g(t_k, X_k, y, z, sum_m nu_m zt_m, u_k) on a batch.
struct DriverOnBatch {
    const model::CompiledProblem& cp;
    const pathsim::PathBatch& pb;
    const model::CompiledExpr& g;

    double operator()(int k, std::size_t i, double y, double z, const double* zt) const {
        model::Point p;
        p.s() = pb.grid.node(k);
        for (int j = 0; j < pb.n; ++j) p.x(j) = pb.x(k, i, j);
        for (int j = 0; j < pb.kdim; ++j) p.u(j) = pb.u(k, i, j);
        p.y() = y;
        p.z() = z;
        double acc = 0.0;
        for (int m = 0; m < pb.marks; ++m) acc += cp.spec.jumps.nu(static_cast<std::size_t>(m)) * zt[m];
        p.ztilde() = acc;
        return g(p);
    }
};

inline std::vector<double> terminal_values(const model::CompiledExpr& phi, const pathsim::PathBatch& pb) {
    std::vector<double> out(pb.M, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < pb.M; ++i) {
        if (!pb.valid[i]) continue;
        model::Point p;
        for (int j = 0; j < pb.n; ++j) p.x(j) = pb.x(pb.grid.N, i, j);
        out[i] = phi(p);
    }
    return out;
}

}  // namespace detail

/// Solves the backward equation with driver g and terminal phi on a batch
/// simulated under one policy. `driver_shift` and `terminal_shift` are
/// optional additive perturbations (functions of s, x and of x).
inline BackwardSolution solve_backward(const model::ProblemSpec& spec, const pathsim::PathBatch& pb,
                                       const BasisSpec& basis = {}, const BackwardOptions& opt = {},
                                       const std::optional<model::Expr>& driver_shift = std::nullopt,
                                       const std::optional<model::Expr>& terminal_shift = std::nullopt) {
    const model::CompiledProblem cp(spec);
    if (pb.n != spec.n || pb.marks != static_cast<int>(spec.jumps.mark_count()))
        throw model::ConfigError("path batch does not match the problem");
    const std::size_t valid = pb.M - pb.invalid_count();
    if (valid < 10 * basis_upper_bound(basis, spec.n))
        throw model::ConfigError("batch must hold at least ten valid paths per basis function");

    model::Expr g_expr = spec.g, phi_expr = spec.phi;
    if (driver_shift) g_expr = g_expr + *driver_shift;
    if (terminal_shift) phi_expr = phi_expr + *terminal_shift;
    const model::CompiledExpr g(g_expr), phi(phi_expr);

    detail::DriverOnBatch drv{cp, pb, g};
    BackwardSolution sol;
    sol.fields = backward_induction(pb, spec.jumps, detail::terminal_values(phi, pb), basis, drv, opt);
    sol.valid_paths = valid;

    const double dt = pb.grid.dt();
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < pb.M; ++i) {
        if (!pb.valid[i]) continue;
        double r = sol.fields.y(pb.grid.N, i);
        for (int k = 0; k < pb.grid.N; ++k)
            r += drv(k, i, sol.fields.y(k, i), sol.fields.z(k, i), sol.fields.zt_row(k, i)) * dt;
        s += r;
        s2 += r * r;
    }
    const double mean = s / valid;
    const double var = valid > 1 ? std::max(0.0, (s2 - valid * mean * mean) / (valid - 1)) : 0.0;
    sol.y0_stderr = std::sqrt(var / valid);
    return sol;
}

struct CostEstimate {
    double J = 0.0;
    double stderr = 0.0;
};

/// J = -Y at the initial node (batch mean over valid paths).
inline CostEstimate cost_functional(const BackwardSolution& sol) {
    double s = 0.0;
    std::size_t c = 0;
    for (std::size_t i = 0; i < sol.fields.M; ++i) {
        const double y = sol.fields.y(0, i);
        if (std::isnan(y)) continue;
        s += y;
        ++c;
    }
    if (c == 0) throw RegressionError("no valid paths at the initial node");
    return {-(s / c), sol.y0_stderr};
}

struct CandidateResult {
    std::string label;
    double J = std::numeric_limits<double>::quiet_NaN();
    double stderr = 0.0;
    std::size_t invalid = 0;
    bool excluded = false;
    std::string note;
};

struct ValueEstimate {
    double value = std::numeric_limits<double>::quiet_NaN();
    double stderr = 0.0;
    int argmin = -1;
    std::vector<CandidateResult> table;
};

struct ValueOptions {
    std::size_t batch = 20000;
    std::uint64_t seed = 1;
    int steps = 32;
    BasisSpec basis{};
    BackwardOptions backward{};
};

/// Minimum of J over a finite candidate family with common random numbers.
inline ValueEstimate estimate_value(const model::ProblemSpec& spec, const std::vector<double>& x0,
                                    const std::vector<pathsim::ControlPolicy>& candidates,
                                    const ValueOptions& opt = {}) {
    if (candidates.empty()) throw model::ConfigError("estimate_value needs at least one candidate");
    const pathsim::TimeGrid grid(spec.t0, spec.T, opt.steps);
    const auto noise = pathsim::sample_noise(grid, spec.jumps, opt.batch, opt.seed);
    ValueEstimate ve;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        CandidateResult r;
        r.label = candidates[c].describe();
        const auto pb = pathsim::simulate_batch(spec, candidates[c], x0, noise);
        r.invalid = pb.invalid_count();
        if (r.invalid == pb.M) {
            r.excluded = true;
            r.note = "all paths invalid: " + pb.first_failure;
            ve.table.push_back(r);
            continue;
        }
        const auto sol = solve_backward(spec, pb, opt.basis, opt.backward);
        const auto J = cost_functional(sol);
        r.J = J.J;
        r.stderr = J.stderr;
        if (ve.argmin < 0 || r.J < ve.value) {
            ve.argmin = static_cast<int>(c);
            ve.value = r.J;
            ve.stderr = r.stderr;
        }
        ve.table.push_back(r);
    }
    return ve;
}

struct StabilityReport {
    double beta = 0.0;
    double lipschitz = 0.0;
    double lhs = 0.0;
    double rhs = 0.0;
    bool pass = false;
};

struct StabilityOptions {
    std::size_t batch = 20000;
    std::uint64_t seed = 1;
    int steps = 32;
    BasisSpec basis{};
    std::size_t lipschitz_samples = 2000;
    double slack = 0.05;
};

/// Weighted a priori estimate between two solutions with data
/// (phi + dphi_i, g + dg_i), evaluated at the initial time:
///   |dY_t|^2 + 1/2 E int e^{b(r-t)}(|dY|^2 + |dZ|^2 + int |dZt|^2 nu) dr
///     <= E e^{b(T-t)}|dphi|^2 + E int e^{b(r-t)}|dg|^2 dr
/// with b = 2 + 2C + 4C^2 and C the measured Lipschitz constant of g in
/// (y, z, ztilde).
inline StabilityReport check_stability_estimate(const model::ProblemSpec& spec, const pathsim::ControlPolicy& policy,
                                                const std::vector<double>& x0, const model::Expr& dphi1,
                                                const model::Expr& dphi2, const model::Expr& dg1,
                                                const model::Expr& dg2, const StabilityOptions& opt = {}) {
    StabilityReport rep;
    {
        // gradient norm in (y, z, ztilde) plus chord slopes, over sampled points
        const model::CompiledExpr g(spec.g), gy(model::derivative(spec.g, model::var::y)),
            gz(model::derivative(spec.g, model::var::z)), gzt(model::derivative(spec.g, model::var::ztilde));
        std::mt19937_64 rng(opt.seed ^ 0x5bd1e995ULL);
        std::uniform_real_distribution<double> unit(-1.0, 1.0);
        const auto& grid = spec.controls.grid();
        for (std::size_t s = 0; s < opt.lipschitz_samples; ++s) {
            model::Point a;
            a.s() = spec.t0 + (spec.T - spec.t0) * 0.5 * (1.0 + unit(rng));
            for (int j = 0; j < spec.n; ++j) a.x(j) = x0[static_cast<std::size_t>(j)] + unit(rng);
            const auto& u = grid[static_cast<std::size_t>(0.5 * (1.0 + unit(rng)) * (grid.size() - 1))];
            for (int j = 0; j < spec.k; ++j) a.u(j) = u[static_cast<std::size_t>(j)];
            model::Point b = a;
            for (double* sa : {&a.y(), &a.z(), &a.ztilde()}) *sa = 5.0 * unit(rng);
            for (double* sb : {&b.y(), &b.z(), &b.ztilde()}) *sb = 5.0 * unit(rng);
            const double d2 = (a.y() - b.y()) * (a.y() - b.y()) + (a.z() - b.z()) * (a.z() - b.z()) +
                              (a.ztilde() - b.ztilde()) * (a.ztilde() - b.ztilde());
            if (d2 > 0) rep.lipschitz = std::max(rep.lipschitz, std::abs(g(a) - g(b)) / std::sqrt(d2));
            rep.lipschitz = std::max(rep.lipschitz, std::sqrt(gy(a) * gy(a) + gz(a) * gz(a) + gzt(a) * gzt(a)));
        }
    }
    const double C = rep.lipschitz;
    rep.beta = 2.0 + 2.0 * C + 4.0 * C * C;

    const pathsim::TimeGrid grid(spec.t0, spec.T, opt.steps);
    const auto noise = pathsim::sample_noise(grid, spec.jumps, opt.batch, opt.seed);
    const auto pb = pathsim::simulate_batch(spec, policy, x0, noise);
    const auto s1 = solve_backward(spec, pb, opt.basis, {}, dg1, dphi1);
    const auto s2 = solve_backward(spec, pb, opt.basis, {}, dg2, dphi2);
    const model::CompiledExpr p1(dphi1), p2(dphi2), g1(dg1), g2(dg2);
    const double dt = grid.dt();
    double y0a = 0, y0b = 0, integral = 0, rhs_t = 0, rhs_g = 0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < pb.M; ++i) {
        if (!pb.valid[i]) continue;
        ++cnt;
        y0a += s1.fields.y(0, i);
        y0b += s2.fields.y(0, i);
        model::Point pT;
        for (int j = 0; j < pb.n; ++j) pT.x(j) = pb.x(grid.N, i, j);
        pT.s() = grid.T;
        const double dphi = p1(pT) - p2(pT);
        rhs_t += std::exp(rep.beta * (grid.T - grid.t0)) * dphi * dphi;
        for (int k = 0; k < grid.N; ++k) {
            const double w = std::exp(rep.beta * (grid.node(k) - grid.t0)) * dt;
            const double dy = s1.fields.y(k, i) - s2.fields.y(k, i);
            const double dz = s1.fields.z(k, i) - s2.fields.z(k, i);
            double dzt = 0.0;
            for (int m = 0; m < pb.marks; ++m) {
                const double d = s1.fields.zt(k, i, m) - s2.fields.zt(k, i, m);
                dzt += spec.jumps.nu(static_cast<std::size_t>(m)) * d * d;
            }
            integral += w * (dy * dy + dz * dz + dzt);
            model::Point p;
            p.s() = grid.node(k);
            for (int j = 0; j < pb.n; ++j) p.x(j) = pb.x(k, i, j);
            for (int j = 0; j < pb.kdim; ++j) p.u(j) = pb.u(k, i, j);
            const double dgv = g1(p) - g2(p);
            rhs_g += w * dgv * dgv;
        }
    }
    const double dY0 = (y0a - y0b) / cnt;
    rep.lhs = dY0 * dY0 + 0.5 * integral / cnt;
    rep.rhs = (rhs_t + rhs_g) / cnt;
    rep.pass = rep.lhs <= rep.rhs * (1.0 + opt.slack) + 1e-300;
    return rep;
}

/// CSV path,step,Y,Z,Ztilde_1..Ztilde_m, one row per (path, node); the Z
/// columns are empty at the last node.
inline void write_fields_csv(std::ostream& os, const BackwardFields& f, const std::string& y = "Y",
                             const std::string& z = "Z", const std::string& zt = "Ztilde") {
    os << "path,step," << y << ',' << z;
    for (int m = 0; m < f.marks; ++m) os << ',' << zt << '_' << m + 1;
    os << '\n';
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << buf;
    };
    for (std::size_t i = 0; i < f.M; ++i)
        for (int k = 0; k <= f.N; ++k) {
            os << i << ',' << k << ',';
            num(f.y(k, i));
            os << ',';
            if (k < f.N) num(f.z(k, i));
            for (int m = 0; m < f.marks; ++m) {
                os << ',';
                if (k < f.N) num(f.zt(k, i, m));
            }
            os << '\n';
        }
}

inline void write_solution_csv(std::ostream& os, const BackwardSolution& sol) { write_fields_csv(os, sol.fields); }

}  // namespace fbsdep::bsde

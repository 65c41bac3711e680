#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fbsdep/model/compiled.hpp"
#include "fbsdep/model/expr.hpp"

namespace fbsdep::model {

/// Invalid configuration: bad dimensions, illegal variables, malformed sets.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Mark {
    double value = 0.0;
    double probability = 1.0;
};

/// Finite-activity jump law: nu = intensity * (discrete mark law).
struct JumpSpec {
    double intensity = 1.0;
    std::vector<Mark> marks{Mark{}};

    std::size_t mark_count() const { return marks.size(); }
    /// nu({e_m})
    double nu(std::size_t m) const { return intensity * marks[m].probability; }

    void validate() const {
        if (!(intensity > 0.0) || !std::isfinite(intensity)) throw ConfigError("jump intensity must be positive");
        if (marks.empty()) throw ConfigError("jump law needs at least one mark");
        double total = 0.0;
        for (const auto& m : marks) {
            if (!(m.probability >= 0.0)) throw ConfigError("negative mark probability");
            total += m.probability;
        }
        if (std::abs(total - 1.0) > 1e-12) throw ConfigError("mark probabilities must sum to 1");
    }
};

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

/// Union of closed axis-aligned boxes in R^k with a finite search grid.
class ControlSet {
public:
    using Vec = std::array<double, max_dim>;

    ControlSet() : ControlSet(std::vector<std::vector<Interval>>{{Interval{0.0, 0.0}}}) {}

    explicit ControlSet(std::vector<std::vector<Interval>> boxes, int points_per_axis = 101)
        : boxes_(std::move(boxes)), points_(points_per_axis) {
        if (boxes_.empty()) throw ConfigError("control set is empty");
        dim_ = static_cast<int>(boxes_.front().size());
        if (dim_ < 1 || dim_ > max_dim) throw ConfigError("control dimension out of range");
        if (points_ < 1) throw ConfigError("control grid needs at least one point per axis");
        for (const auto& b : boxes_) {
            if (static_cast<int>(b.size()) != dim_) throw ConfigError("control boxes differ in dimension");
            for (const auto& iv : b)
                if (!(iv.lo <= iv.hi) || !std::isfinite(iv.lo) || !std::isfinite(iv.hi))
                    throw ConfigError("control interval must be finite and non-empty");
        }
        build_grid();
    }

    /// Union of scalar intervals.
    static ControlSet intervals(const std::vector<Interval>& ivs, int points_per_interval = 101) {
        std::vector<std::vector<Interval>> boxes;
        for (const auto& iv : ivs) boxes.push_back({iv});
        return ControlSet(std::move(boxes), points_per_interval);
    }

    int dim() const { return dim_; }
    int points_per_axis() const { return points_; }
    const std::vector<std::vector<Interval>>& boxes() const { return boxes_; }

    /// Grid points in lexicographic order; argmax ties resolve to the first.
    const std::vector<Vec>& grid() const { return grid_; }

    bool contains(const Vec& u, double tol = 1e-12) const {
        for (const auto& b : boxes_) {
            bool in = true;
            for (int a = 0; a < dim_; ++a)
                if (u[a] < b[a].lo - tol || u[a] > b[a].hi + tol) in = false;
            if (in) return true;
        }
        return false;
    }

    /// Nearest point of the set (Euclidean); ties go to the earlier box.
    Vec project(const Vec& u) const {
        Vec best{};
        double best_d = std::numeric_limits<double>::infinity();
        for (const auto& b : boxes_) {
            Vec c = u;
            double d = 0.0;
            for (int a = 0; a < dim_; ++a) {
                c[a] = std::clamp(u[a], b[a].lo, b[a].hi);
                d += (c[a] - u[a]) * (c[a] - u[a]);
            }
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        return best;
    }

private:
    void build_grid() {
        for (const auto& b : boxes_) {
            std::vector<std::vector<double>> axes(static_cast<std::size_t>(dim_));
            for (int a = 0; a < dim_; ++a) {
                const auto& iv = b[a];
                if (iv.lo == iv.hi || points_ == 1) {
                    axes[a] = {iv.lo};
                    continue;
                }
                for (int j = 0; j < points_; ++j)
                    axes[a].push_back(j + 1 == points_ ? iv.hi : iv.lo + (iv.hi - iv.lo) * j / (points_ - 1));
            }
            std::vector<std::size_t> idx(static_cast<std::size_t>(dim_), 0);
            while (true) {
                Vec p{};
                for (int a = 0; a < dim_; ++a) p[a] = axes[a][idx[a]];
                grid_.push_back(p);
                int a = dim_ - 1;
                while (a >= 0 && ++idx[a] == axes[a].size()) idx[a--] = 0;
                if (a < 0) break;
            }
        }
        std::sort(grid_.begin(), grid_.end());
        grid_.erase(std::unique(grid_.begin(), grid_.end()), grid_.end());
    }

    std::vector<std::vector<Interval>> boxes_;
    int points_ = 101;
    int dim_ = 1;
    std::vector<Vec> grid_;
};

/// Full model: forward coefficients, driver, terminal cost, jumps, controls, horizon.
struct ProblemSpec {
    std::string name;
    int n = 1;
    int k = 1;
    std::vector<Expr> b{lit(0.0)};
    std::vector<Expr> sigma{lit(0.0)};
    std::vector<Expr> f{lit(0.0)};
    Expr g = lit(0.0);
    Expr phi = lit(0.0);
    JumpSpec jumps{};
    ControlSet controls{};
    double t0 = 0.0;
    double T = 1.0;
    /// Paths whose first state component falls to or below this are flagged invalid.
    std::optional<double> state_floor;
};

namespace detail {

inline void check_roles(const Expr& e, const std::string& what, int n, int k, bool allow_e, bool allow_yz,
                        bool state_only) {
    for (const Var& v : e.variables()) {
        bool ok = true;
        switch (v.kind) {
            case VarKind::s: ok = !state_only; break;
            case VarKind::x: ok = v.index < n; break;
            case VarKind::u: ok = !state_only && v.index < k; break;
            case VarKind::e: ok = allow_e; break;
            case VarKind::y:
            case VarKind::z:
            case VarKind::ztilde: ok = allow_yz; break;
        }
        if (!ok) throw ConfigError(what + " may not reference variable '" + var_name(v) + "'");
    }
}

}  // namespace detail

inline void validate(const ProblemSpec& p) {
    if (p.n < 1 || p.n > max_dim) throw ConfigError("state dimension out of range");
    if (p.k != p.controls.dim()) throw ConfigError("control dimension does not match control set");
    if (static_cast<int>(p.b.size()) != p.n || static_cast<int>(p.sigma.size()) != p.n ||
        static_cast<int>(p.f.size()) != p.n)
        throw ConfigError("b, sigma and f must each have n components");
    if (!(p.t0 >= 0.0) || !(p.t0 < p.T) || !std::isfinite(p.T)) throw ConfigError("horizon must satisfy 0 <= t < T");
    p.jumps.validate();
    for (int i = 0; i < p.n; ++i) {
        detail::check_roles(p.b[i], "b", p.n, p.k, false, false, false);
        detail::check_roles(p.sigma[i], "sigma", p.n, p.k, false, false, false);
        detail::check_roles(p.f[i], "f", p.n, p.k, true, false, false);
    }
    detail::check_roles(p.g, "g", p.n, p.k, false, true, false);
    detail::check_roles(p.phi, "phi", p.n, p.k, false, false, true);
}

/// Compiled coefficients for hot loops.
struct CompiledProblem {
    explicit CompiledProblem(const ProblemSpec& p) : spec(p) {
        validate(p);
        for (int i = 0; i < p.n; ++i) {
            b.emplace_back(p.b[i]);
            sigma.emplace_back(p.sigma[i]);
            f.emplace_back(p.f[i]);
        }
        g = CompiledExpr(p.g);
        phi = CompiledExpr(p.phi);
    }
    ProblemSpec spec;
    std::vector<CompiledExpr> b, sigma, f;
    CompiledExpr g, phi;
};

/// The variables g is differentiated in: x1..xn, y, z, ztilde.
inline std::vector<Var> driver_vars(int n) {
    std::vector<Var> out;
    for (int i = 0; i < n; ++i) out.push_back(var::x(i));
    out.push_back(var::y);
    out.push_back(var::z);
    out.push_back(var::ztilde);
    return out;
}

/// Derivative trees of every coefficient. Index [i][j] is d(coef_i)/dx_j,
/// [i][j][l] the second derivative in x_j, x_l.
struct CoefficientDerivatives {
    std::vector<std::vector<Expr>> b_x, sigma_x, f_x;
    std::vector<std::vector<std::vector<Expr>>> b_xx, sigma_xx, f_xx;
    std::vector<Expr> phi_x;
    std::vector<std::vector<Expr>> phi_xx;
    /// gradient and Hessian of g over driver_vars(n)
    std::vector<Expr> g_grad;
    std::vector<std::vector<Expr>> g_hess;
};

inline CoefficientDerivatives differentiate_spec(const ProblemSpec& p) {
    validate(p);
    CoefficientDerivatives d;
    auto jac = [&](const std::vector<Expr>& c, auto& first, auto& second) {
        first.assign(p.n, {});
        second.assign(p.n, {});
        for (int i = 0; i < p.n; ++i) {
            second[i].assign(p.n, {});
            for (int j = 0; j < p.n; ++j) {
                first[i].push_back(derivative(c[i], var::x(j)));
                for (int l = 0; l < p.n; ++l) second[i][j].push_back(derivative(first[i][j], var::x(l)));
            }
        }
    };
    jac(p.b, d.b_x, d.b_xx);
    jac(p.sigma, d.sigma_x, d.sigma_xx);
    jac(p.f, d.f_x, d.f_xx);
    d.phi_xx.assign(p.n, {});
    for (int j = 0; j < p.n; ++j) {
        d.phi_x.push_back(derivative(p.phi, var::x(j)));
        for (int l = 0; l < p.n; ++l) d.phi_xx[j].push_back(derivative(d.phi_x[j], var::x(l)));
    }
    const auto vars = driver_vars(p.n);
    for (const Var& a : vars) d.g_grad.push_back(derivative(p.g, a));
    d.g_hess.assign(vars.size(), {});
    for (std::size_t a = 0; a < vars.size(); ++a)
        for (const Var& c : vars) d.g_hess[a].push_back(derivative(d.g_grad[a], c));
    return d;
}

}  // namespace fbsdep::model

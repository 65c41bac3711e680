#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "fbsdep/model/compiled.hpp"
#include "fbsdep/model/expr.hpp"
#include "fbsdep/model/problem.hpp"

namespace fbsdep::hjb {

/// Which one-sided difference to use where a breakpoint intervenes.
enum class Side { automatic, left, right };

struct Derivatives {
    double v = 0, v_t = 0, v_x = 0, v_xx = 0;
    bool one_sided = false;
};

/// Candidate value function V(s, x) for scalar state. Derivatives come from
/// the expression tree except near a breakpoint, where a one-sided
/// difference on the requested side is used.
class ValueCandidate {
public:
    explicit ValueCandidate(model::Expr V, std::string domain = "x in R", std::optional<double> x_lower = std::nullopt)
        : V_(std::move(V)),
          Vt_(model::derivative(V_, model::var::s)),
          Vx_(model::derivative(V_, model::var::x(0))),
          Vxx_(model::derivative(Vx_, model::var::x(0))),
          cv_(V_), ct_(Vt_), cx_(Vx_), cxx_(Vxx_),
          domain_(std::move(domain)), x_lower_(x_lower) {
        for (const auto& w : V_.variables())
            if (!(w == model::var::s || w == model::var::x(0)))
                throw model::ConfigError("value candidate may depend on s and x only, found " + model::var_name(w));
    }

    const model::Expr& expr() const { return V_; }
    const std::string& domain() const { return domain_; }
    std::optional<double> x_lower() const { return x_lower_; }

    double value(double s, double x) const { return cv_(at(s, x)); }

    bool smooth_at(double s, double x, double tol = 1e-9) const { return !V_.near_breakpoint(at(s, x), tol); }

    /// AD derivatives; one-sided differences within `tol` of a breakpoint
    /// (side automatic picks right in x and forward in t).
    Derivatives derivatives(double s, double x, Side side = Side::automatic, double tol = 1e-9) const {
        Derivatives d;
        d.v = value(s, x);
        if (smooth_at(s, x, tol)) {
            const auto p = at(s, x);
            d.v_t = ct_(p);
            d.v_x = cx_(p);
            d.v_xx = cxx_(p);
            return d;
        }
        d.one_sided = true;
        const double dir = side == Side::left ? -1.0 : 1.0;
        d.v_x = one_sided_first([&](double h) { return value(s, x + dir * h); }, fd_step(x)) * dir;
        d.v_xx = one_sided_second([&](double h) { return value(s, x + dir * h); }, fd_step2(x));
        d.v_t = one_sided_first([&](double h) { return value(s + h, x); }, fd_step(s));
        return d;
    }

    /// Central differences (used to cross-check the tree derivatives).
    Derivatives central_differences(double s, double x) const {
        Derivatives d;
        d.v = value(s, x);
        const double h1 = fd_step(x), h2 = fd_step2(x), ht = fd_step(s);
        d.v_x = (value(s, x + h1) - value(s, x - h1)) / (2 * h1);
        d.v_xx = (value(s, x + h2) - 2 * d.v + value(s, x - h2)) / (h2 * h2);
        d.v_t = (value(s + ht, x) - value(s - ht, x)) / (2 * ht);
        return d;
    }

private:
    static model::Point at(double s, double x) {
        model::Point p;
        p.s() = s;
        p.x(0) = x;
        return p;
    }
    static double fd_step(double a) { return 1e-5 * std::max(1.0, std::abs(a)); }
    static double fd_step2(double a) { return 2e-4 * std::max(1.0, std::abs(a)); }

    // second-order accurate one-sided stencils in h >= 0
    template <class F>
    static double one_sided_first(F&& f, double h) {
        return (-3 * f(0.0) + 4 * f(h) - f(2 * h)) / (2 * h);
    }
    template <class F>
    static double one_sided_second(F&& f, double h) {
        return (2 * f(0.0) - 5 * f(h) + 4 * f(2 * h) - f(3 * h)) / (h * h);
    }

    model::Expr V_, Vt_, Vx_, Vxx_;
    model::CompiledExpr cv_, ct_, cx_, cxx_;
    std::string domain_;
    std::optional<double> x_lower_;
};

}  // namespace fbsdep::hjb

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "fbsdep/hjb/value.hpp"
#include "fbsdep/model/compiled.hpp"
#include "fbsdep/model/problem.hpp"

namespace fbsdep::hjb {

using ControlVec = model::ControlSet::Vec;

/// Scalar-state evaluation of the coefficients at (s, x, u).
class ScalarProblem {
public:
    explicit ScalarProblem(const model::ProblemSpec& spec) : cp_(spec) {
        if (spec.n != 1) throw model::ConfigError("Hamiltonian evaluation is implemented for scalar state only");
    }

    const model::ProblemSpec& spec() const { return cp_.spec; }
    std::size_t marks() const { return cp_.spec.jumps.mark_count(); }
    double nu(std::size_t m) const { return cp_.spec.jumps.nu(m); }

    model::Point point(double s, double x, const ControlVec& u) const {
        model::Point p;
        p.s() = s;
        p.x(0) = x;
        for (int j = 0; j < cp_.spec.k; ++j) p.u(j) = u[static_cast<std::size_t>(j)];
        return p;
    }
    double b(double s, double x, const ControlVec& u) const { return cp_.b[0](point(s, x, u)); }
    double sigma(double s, double x, const ControlVec& u) const { return cp_.sigma[0](point(s, x, u)); }
    double f(double s, double x, const ControlVec& u, std::size_t m) const {
        auto p = point(s, x, u);
        p.e() = cp_.spec.jumps.marks[m].value;
        return cp_.f[0](p);
    }
    double g(double s, double x, double y, double z, double zt_integral, const ControlVec& u) const {
        auto p = point(s, x, u);
        p.y() = y;
        p.z() = z;
        p.ztilde() = zt_integral;
        return cp_.g(p);
    }
    double phi(double x) const {
        model::Point p;
        p.x(0) = x;
        return cp_.phi(p);
    }

private:
    model::CompiledProblem cp_;
};

/// G at (t, x, -v, -v_x, -v_xx, u) with the jump shifts v(t, x + f_e)
/// supplied by the caller.
inline double eval_G(const ScalarProblem& pr, double t, double x, double v, double v_x, double v_xx,
                     const std::vector<double>& v_shift, const ControlVec& u) {
    const double sig = pr.sigma(t, x, u), b = pr.b(t, x, u);
    double nonlocal = 0.0, zt = 0.0;
    for (std::size_t m = 0; m < pr.marks(); ++m) {
        const double fe = pr.f(t, x, u, m);
        nonlocal += pr.nu(m) * (v_shift[m] - v - v_x * fe);
        zt += pr.nu(m) * (v_shift[m] - v);
    }
    return -0.5 * sig * v_xx * sig - v_x * b - nonlocal + pr.g(t, x, -v, -sig * v_x, -zt, u);
}

/// G for a value candidate; derivatives from the candidate at (t, x).
inline double eval_G(const ScalarProblem& pr, const ValueCandidate& V, const Derivatives& d, double t, double x,
                     const ControlVec& u) {
    std::vector<double> shift(pr.marks());
    for (std::size_t m = 0; m < pr.marks(); ++m) shift[m] = V.value(t, x + pr.f(t, x, u, m));
    return eval_G(pr, t, x, d.v, d.v_x, d.v_xx, shift, u);
}

inline double eval_G(const ScalarProblem& pr, const ValueCandidate& V, double t, double x, const ControlVec& u) {
    return eval_G(pr, V, V.derivatives(t, x), t, x, u);
}

/// Arguments of H, H* and the trajectory-indexed Hamiltonian. Per-mark
/// vectors share the jump law's mark order.
struct HamiltonianContext {
    double s = 0, x = 0, y = 0, z = 0;
    std::vector<double> zt;  // Z-tilde per mark
    double p = 0, q = 0, P = 0;
    std::vector<double> qt, Qt;  // q-tilde, Q-tilde per mark
    double h = 1, pstar = 0, qstar = 0, Pstar = 0;
    double sigma_bar = 0;
    std::vector<double> f_bar;  // per mark
    double gz_bar = 0;

    static HamiltonianContext zeros(std::size_t marks) {
        HamiltonianContext c;
        c.zt.assign(marks, 0.0);
        c.qt.assign(marks, 0.0);
        c.Qt.assign(marks, 0.0);
        c.f_bar.assign(marks, 0.0);
        return c;
    }
};

namespace detail {
inline double integral(const ScalarProblem& pr, const std::vector<double>& per_mark) {
    double acc = 0.0;
    for (std::size_t m = 0; m < pr.marks(); ++m) acc += pr.nu(m) * per_mark[m];
    return acc;
}
}  // namespace detail

/// H(s,x,y,z,zt; p,q,P,u) with the shifted z argument z + p (sigma - sigma_bar).
inline double eval_H(const ScalarProblem& pr, const HamiltonianContext& c, const ControlVec& u) {
    const double sig = pr.sigma(c.s, c.x, u);
    return c.p * pr.b(c.s, c.x, u) + c.q * sig + 0.5 * sig * c.P * sig - sig * c.P * c.sigma_bar +
           pr.g(c.s, c.x, c.y, c.z + c.p * (sig - c.sigma_bar), detail::integral(pr, c.zt), u);
}

/// H*(s,x,y,z,zt; p,h,p*,q*,P*,u); g_z in the leading term is taken along
/// the trajectory (ctx.gz_bar).
inline double eval_Hstar(const ScalarProblem& pr, const HamiltonianContext& c, const ControlVec& u) {
    const double sig = pr.sigma(c.s, c.x, u);
    return (-c.h * c.gz_bar * c.p + c.qstar) * sig + 0.5 * sig * c.Pstar * sig - sig * c.Pstar * c.sigma_bar +
           c.h * pr.g(c.s, c.x, c.y, c.z + c.p * (sig - c.sigma_bar), detail::integral(pr, c.zt), u) +
           c.pstar * pr.b(c.s, c.x, u);
}

struct CalH {
    std::array<double, 3> forms{};
    double value = 0.0;
    double max_rel_diff = 0.0;
};

/// The trajectory-indexed Hamiltonian in its three written forms. The
/// third form evaluates G with the jump size at the control u, so it
/// coincides with the other two when f(s, x, u, e) = f_bar(s, e).
inline CalH eval_calH(const ScalarProblem& pr, const HamiltonianContext& c, const ValueCandidate& V,
                      const ControlVec& u) {
    const std::size_t K = pr.marks();
    const double s = c.s, x = c.x;
    const double V0 = V.value(s, x);
    const double sig = pr.sigma(s, x, u), b = pr.b(s, x, u);
    double jump_bar = 0.0;  // int [V(x + f_bar) - V(x)] nu
    double tail = 0.0;      // int <qt - (P + Qt) f_bar / 2, f_bar> nu
    for (std::size_t m = 0; m < K; ++m) {
        jump_bar += pr.nu(m) * (V.value(s, x + c.f_bar[m]) - V0);
        tail += pr.nu(m) * (c.qt[m] - 0.5 * (c.P + c.Qt[m]) * c.f_bar[m]) * c.f_bar[m];
    }
    CalH out;
    {
        // H at y = -V, z = sigma_bar p and the jump integral of V along f_bar
        double extra = 0.0;
        for (std::size_t m = 0; m < K; ++m)
            extra += pr.nu(m) * (c.qt[m] * c.f_bar[m] - 0.5 * c.P * c.f_bar[m] * c.f_bar[m] -
                                 0.5 * c.Qt[m] * c.f_bar[m] * c.f_bar[m]);
        const double z = c.sigma_bar * c.p;
        const double Hval = c.p * b + c.q * sig + 0.5 * sig * c.P * sig - sig * c.P * c.sigma_bar +
                            pr.g(s, x, -V0, z + c.p * (sig - c.sigma_bar), -jump_bar, u);
        out.forms[0] = Hval + extra - 0.5 * c.P * c.sigma_bar * c.sigma_bar;
    }
    out.forms[1] = c.p * b + (c.q - c.P * c.sigma_bar) * sig + 0.5 * c.P * sig * sig +
                   pr.g(s, x, -V0, sig * c.p, -jump_bar, u) + tail - 0.5 * c.P * c.sigma_bar * c.sigma_bar;
    {
        std::vector<double> shift(K);
        double jump_u = 0.0;
        for (std::size_t m = 0; m < K; ++m) {
            const double fe = pr.f(s, x, u, m);
            shift[m] = V.value(s, x + fe);
            jump_u += pr.nu(m) * (shift[m] - V0 + c.p * fe);
        }
        // G(s, x, -V, p, P, u) means v = V, v_x = -p, v_xx = -P
        const double G = eval_G(pr, s, x, V0, -c.p, -c.P, shift, u);
        out.forms[2] = G + (c.q - c.P * c.sigma_bar) * sig - 0.5 * c.P * c.sigma_bar * c.sigma_bar + jump_u + tail;
    }
    out.value = out.forms[1];
    const double scale = std::max({1.0, std::abs(out.forms[0]), std::abs(out.forms[1]), std::abs(out.forms[2])});
    for (int a = 0; a < 3; ++a)
        for (int b2 = a + 1; b2 < 3; ++b2)
            out.max_rel_diff = std::max(out.max_rel_diff, std::abs(out.forms[a] - out.forms[b2]) / scale);
    return out;
}

}  // namespace fbsdep::hjb

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fbsdep/adjoint/drift.hpp"
#include "fbsdep/bsde/backward.hpp"

namespace fbsdep::adjoint {

struct AdjointOptions {
    bsde::BasisSpec basis{};
    bsde::BackwardOptions backward{};
    /// integrate exactly when the solution is deterministic
    bool allow_exact = true;
};

/// One backward system on the batch: Y holds p (or P, p*, P*), Z holds q,
/// Zt holds q-tilde per mark.
struct AdjointField {
    bsde::BackwardFields fields;
    std::string method;       // "exponential" or "regression"
    double asymmetry = 0.0;   // matrix asymmetry after symmetrization (scalar state: 0)
};

struct DualSystem {
    std::vector<double> h;  // (N+1) x M, node-major
    AdjointField first;     // (p*, q*, q-tilde*)
    AdjointField second;    // (P*, Q*, Q-tilde*)
    std::size_t M = 0;
    std::size_t nonpositive_jump_factors = 0;  // jumps with 1 + g_zt <= 0
    double h_at(int k, std::size_t i) const { return h[static_cast<std::size_t>(k) * M + i]; }
};

namespace detail {

/// Exact backward integration of -dY = (A_k Y + C_k) ds when the terminal
/// value and A_k, C_k are identical on every valid path (then Z = Zt = 0).
template <class Drift>
std::optional<bsde::BackwardFields> deterministic_solve(const pathsim::PathBatch& pb,
                                                        const std::vector<double>& terminal, Drift&& drift) {
    const auto rows = pb.valid_paths();
    if (rows.empty()) return std::nullopt;
    const double yT = terminal[rows.front()];
    for (std::size_t i : rows)
        if (!(terminal[i] == yT)) return std::nullopt;
    const int N = pb.grid.N, marks = pb.marks;
    const std::size_t M = pb.M;
    const double nan = std::numeric_limits<double>::quiet_NaN(), dt = pb.grid.dt();
    bsde::BackwardFields out;
    out.N = N;
    out.M = M;
    out.marks = marks;
    out.Y.assign(static_cast<std::size_t>(N + 1) * M, nan);
    out.Z.assign(static_cast<std::size_t>(N) * M, nan);
    out.Zt.assign(static_cast<std::size_t>(N) * M * static_cast<std::size_t>(marks), nan);
    out.cond.assign(static_cast<std::size_t>(N), 1.0);
    out.residual.assign(static_cast<std::size_t>(N), 0.0);
    out.basis_size.assign(static_cast<std::size_t>(N), 0);
    const std::vector<double> zeros(static_cast<std::size_t>(marks), 0.0);
    double y = yT;
    for (std::size_t i : rows) out.Y[static_cast<std::size_t>(N) * M + i] = y;
    for (int k = N - 1; k >= 0; --k) {
        const double C0 = drift(k, rows.front(), 0.0, 0.0, zeros.data());
        const double A0 = drift(k, rows.front(), 1.0, 0.0, zeros.data()) - C0;
        for (std::size_t i : rows) {
            const double C = drift(k, i, 0.0, 0.0, zeros.data());
            const double A = drift(k, i, 1.0, 0.0, zeros.data()) - C;
            if (!(C == C0 && A == A0)) return std::nullopt;
        }
        y = y * std::exp(A0 * dt) + (A0 == 0.0 ? C0 * dt : C0 * std::expm1(A0 * dt) / A0);
        for (std::size_t i : rows) {
            out.Y[static_cast<std::size_t>(k) * M + i] = y;
            out.Z[static_cast<std::size_t>(k) * M + i] = 0.0;
            for (int m = 0; m < marks; ++m) out.Zt[(static_cast<std::size_t>(k) * M + i) * marks + m] = 0.0;
        }
    }
    return out;
}

template <class Drift>
AdjointField solve_linear(const model::ProblemSpec& spec, const pathsim::PathBatch& pb,
                          const std::vector<double>& terminal, Drift&& drift, const AdjointOptions& opt,
                          const std::vector<double>* h = nullptr) {
    AdjointField out;
    if (opt.allow_exact) {
        if (auto exact = deterministic_solve(pb, terminal, drift)) {
            out.fields = std::move(*exact);
            out.method = "exponential";
            return out;
        }
    }
    out.fields = bsde::backward_induction(pb, spec.jumps, terminal, opt.basis, drift, opt.backward, h);
    out.method = "regression";
    return out;
}

}  // namespace detail

/// (p, q, q-tilde) along the trajectory.
inline AdjointField solve_first_order(const CoefficientSet& cs, const Trajectory& tr, const AdjointOptions& opt = {}) {
    const auto& pb = tr.pb();
    std::vector<double> terminal(pb.M, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i : pb.valid_paths()) terminal[i] = cs.phi_x(pb.x(pb.grid.N, i));
    NodeCache cache(cs, tr);
    auto drift = [&](int k, std::size_t i, double p, double q, const double* qt) {
        return first_order_drift(cache.at(k, i), p, q, qt);
    };
    return detail::solve_linear(cs.spec(), pb, terminal, drift, opt);
}

/// (P, Q, Q-tilde) given the first-order solution on the same batch.
inline AdjointField solve_second_order(const CoefficientSet& cs, const Trajectory& tr, const AdjointField& first,
                                       const AdjointOptions& opt = {}) {
    const auto& pb = tr.pb();
    std::vector<double> terminal(pb.M, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i : pb.valid_paths()) terminal[i] = cs.phi_xx(pb.x(pb.grid.N, i));
    NodeCache cache(cs, tr);
    const auto& f1 = first.fields;
    auto drift = [&](int k, std::size_t i, double P, double Q, const double* Qt) {
        return second_order_drift(cache.at(k, i), f1.y(k, i), f1.z(k, i), f1.zt_row(k, i), P, Q, Qt);
    };
    return detail::solve_linear(cs.spec(), pb, terminal, drift, opt);
}

/// h forward by Euler with the jump multiplier (1 + g_zt); then (p*, q*,
/// q-tilde*) and (P*, Q*, Q-tilde*) backward, with h added to the basis.
/// Unless set, the jump block uses affine functions only: h is heavy
/// tailed and higher powers extrapolate badly on the few jump rows.
inline DualSystem solve_dual(const CoefficientSet& cs, const Trajectory& tr, AdjointOptions opt = {}) {
    if (opt.basis.mark_degree < 0) opt.basis.mark_degree = std::min(opt.basis.degree, 1);
    const auto& pb = tr.pb();
    const int N = pb.grid.N, K = pb.marks;
    const std::size_t M = pb.M;
    const double dt = pb.grid.dt();
    DualSystem d;
    d.M = M;
    d.h.assign(static_cast<std::size_t>(N + 1) * M, std::numeric_limits<double>::quiet_NaN());
    const auto rows = pb.valid_paths();
    for (std::size_t i : rows) d.h[i] = 1.0;
    {
        NodeCache cache(cs, tr);
        double lambda = 0.0;
        for (int m = 0; m < K; ++m) lambda += cs.spec().jumps.nu(static_cast<std::size_t>(m));
        for (int k = 0; k < N; ++k)
            for (std::size_t i : rows) {
                const auto& c = cache.at(k, i);
                double factor = 1.0 + c.gy * dt + c.gz * pb.dw(k, i) - c.gzt * lambda * dt;
                for (int m = 0; m < K; ++m) {
                    const int n = pb.count(k, i, m);
                    if (n == 0) continue;
                    if (1.0 + c.gzt <= 0.0) d.nonpositive_jump_factors += static_cast<std::size_t>(n);
                    factor *= std::pow(1.0 + c.gzt, n);
                }
                d.h[static_cast<std::size_t>(k + 1) * M + i] = d.h[static_cast<std::size_t>(k) * M + i] * factor;
            }
    }
    std::vector<double> terminal(M, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i : rows) terminal[i] = d.h_at(N, i) * cs.phi_x(pb.x(N, i));
    {
        NodeCache cache(cs, tr);
        auto drift = [&](int k, std::size_t i, double ps, double qs, const double* qts) {
            return dual_first_drift(cache.at(k, i), d.h[static_cast<std::size_t>(k) * M + i], ps, qs, qts);
        };
        d.first = detail::solve_linear(cs.spec(), pb, terminal, drift, opt, &d.h);
    }
    for (std::size_t i : rows) terminal[i] = d.h_at(N, i) * cs.phi_xx(pb.x(N, i));
    {
        NodeCache cache(cs, tr);
        const auto& f1 = d.first.fields;
        auto drift = [&](int k, std::size_t i, double Ps, double Qs, const double* Qts) {
            return dual_second_drift(cache.at(k, i), d.h[static_cast<std::size_t>(k) * M + i], f1.y(k, i),
                                     f1.z(k, i), f1.zt_row(k, i), Ps, Qs, Qts);
        };
        d.second = detail::solve_linear(cs.spec(), pb, terminal, drift, opt, &d.h);
    }
    return d;
}

/// CSV per system: "first", "second", "dual" (p*, with h), "dual2".
inline void write_adjoint_csv(std::ostream& os, const AdjointField& a, const std::string& system) {
    if (system == "first")
        bsde::write_fields_csv(os, a.fields, "p", "q", "qtilde");
    else if (system == "second")
        bsde::write_fields_csv(os, a.fields, "P", "Q", "Qtilde");
    else if (system == "dual")
        bsde::write_fields_csv(os, a.fields, "pstar", "qstar", "qtildestar");
    else if (system == "dual2")
        bsde::write_fields_csv(os, a.fields, "Pstar", "Qstar", "Qtildestar");
    else
        throw model::ConfigError("unknown adjoint system '" + system + "'");
}

inline void write_h_csv(std::ostream& os, const DualSystem& d, int N) {
    os << "path,step,h\n";
    char buf[64];
    for (std::size_t i = 0; i < d.M; ++i)
        for (int k = 0; k <= N; ++k) {
            std::snprintf(buf, sizeof buf, "%.17g", d.h_at(k, i));
            os << i << ',' << k << ',' << buf << '\n';
        }
}

}  // namespace fbsdep::adjoint

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fbsdep/model/compiled.hpp"
#include "fbsdep/model/problem.hpp"

namespace fbsdep::fixtures {

/// Nested-quadrature tree for the discrete backward scheme under a constant
/// control: Gauss-Hermite nodes for dW, truncated Poisson counts for jumps.
struct OracleSpec {
    int steps = 3;
    int hermite = 16;
    int max_jumps = 12;
};

struct OracleResult {
    double J = 0.0;            // -Y at t0
    double Y = 0.0;
    double tail_bound = 0.0;   // |Y(max_jumps) - Y(max_jumps - 2)|
    double quadrature_diff = 0.0;  // |Y(hermite) - Y(hermite - 4)|
    double error_bound() const { return tail_bound + quadrature_diff; }
};

/// Probabilists' Gauss-Hermite rule (weights sum to one).
inline void gauss_hermite(int n, std::vector<double>& nodes, std::vector<double>& weights) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    nodes.resize(static_cast<std::size_t>(n));
    weights.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        nodes[static_cast<std::size_t>(k)] = es.eigenvalues()(k);
        const double v = es.eigenvectors()(0, k);
        weights[static_cast<std::size_t>(k)] = v * v;
    }
}

namespace detail {

/// P(n > nmax) for a Poisson(lam) count, summed term by term.
inline double poisson_tail(double lam, int nmax) {
    double term = std::exp(-lam), tail = 0.0;
    for (int n = 0; n <= nmax + 60 && (n <= nmax || term > 0.0); ++n) {
        if (n > nmax) tail += term;
        term *= lam / (n + 1);
    }
    return tail;
}

class OracleTree {
public:
    OracleTree(const model::ProblemSpec& spec, const model::ControlSet::Vec& u, int steps, int hermite, int max_jumps)
        : spec_(spec), b_(spec.b[0]), sigma_(spec.sigma[0]), f_(spec.f[0]), g_(spec.g), phi_(spec.phi),
          u_(spec.controls.project(u)), N_(steps), nmax_(max_jumps) {
        dt_ = (spec.T - spec.t0) / steps;
        nu_ = spec.jumps.nu(0);
        e_ = spec.jumps.marks[0].value;
        gauss_hermite(hermite, xi_, w_);
        const double lam = nu_ * dt_;
        double mass = 0.0, term = std::exp(-lam);
        for (int n = 0; n <= nmax_; ++n) {
            pi_.push_back(term);
            mass += term;
            term *= lam / (n + 1);
        }
        for (double& p : pi_) p /= mass;
        // regression slope on the count is Cov/Var under the truncated law
        for (int n = 0; n <= nmax_; ++n) nbar_ += n * pi_[static_cast<std::size_t>(n)];
        for (int n = 0; n <= nmax_; ++n) nvar_ += (n - nbar_) * (n - nbar_) * pi_[static_cast<std::size_t>(n)];
    }

    double value(double x0) {
        return y(0, x0);
    }

private:
    model::Point at(int k, double x) const {
        model::Point p;
        p.s() = spec_.t0 + k * dt_;
        p.x(0) = x;
        for (int j = 0; j < spec_.k; ++j) p.u(j) = u_[static_cast<std::size_t>(j)];
        return p;
    }

    double y(int k, double x) {
        if (spec_.state_floor && !(x > *spec_.state_floor))
            throw model::DomainError("oracle state at or below the floor: " + std::to_string(x));
        if (k == N_) {
            model::Point p;
            p.x(0) = x;
            const double v = phi_(p);
            return v;
        }
        auto p = at(k, x);
        const double b = b_(p), sig = sigma_(p);
        p.e() = e_;
        const double comp = nu_ * f_(p);
        const double sq = std::sqrt(dt_);
        double m = 0, mw = 0, mj = 0;
        std::vector<double> ys;
        ys.reserve(pi_.size() * xi_.size());
        for (int n = 0; n <= nmax_; ++n) {
            double xj = x;
            for (int r = 0; r < n; ++r) {
                auto q = p;
                q.x(0) = xj;
                xj += f_(q);
            }
            for (std::size_t a = 0; a < xi_.size(); ++a) {
                const double xn = xj + (b - comp) * dt_ + sig * sq * xi_[a];
                const double v = y(k + 1, xn);
                const double w = pi_[static_cast<std::size_t>(n)] * w_[a];
                ys.push_back(v);
                m += w * v;
                mw += w * v * sq * xi_[a];
                mj += w * v * (n - nbar_);
            }
        }
        const double z = mw / dt_, zt = mj / nvar_;
        auto g = [&](double yy) {
            auto q = at(k, x);
            q.y() = yy;
            q.z() = z;
            q.ztilde() = nu_ * zt;
            return g_(q);
        };
        double y0 = 0.0;
        std::size_t c = 0;
        for (int n = 0; n <= nmax_; ++n)
            for (std::size_t a = 0; a < xi_.size(); ++a, ++c)
                y0 += pi_[static_cast<std::size_t>(n)] * w_[a] * (ys[c] + g(ys[c]) * dt_);
        const double out = m + g(y0) * dt_;
        return out;
    }

    const model::ProblemSpec& spec_;
    model::CompiledExpr b_, sigma_, f_, g_, phi_;
    model::ControlSet::Vec u_;
    int N_, nmax_;
    double dt_ = 0, nu_ = 0, e_ = 0, nbar_ = 0, nvar_ = 0;
    std::vector<double> xi_, w_, pi_;
};

}  // namespace detail

/// J of a constant control (projected onto U) from x0 by exhaustive quadrature of the same
/// discrete scheme the regression solver uses (explicit step, then one
/// implicit refinement). Scalar state and a single jump mark only.
inline OracleResult run_oracle(const model::ProblemSpec& spec, double x0, const model::ControlSet::Vec& u,
                               const OracleSpec& os = {}) {
    if (spec.n != 1) throw model::ConfigError("oracle supports scalar state only");
    if (spec.jumps.mark_count() != 1) throw model::ConfigError("oracle supports a single jump mark only");
    if (os.steps < 1 || os.steps > 4) throw model::ConfigError("oracle depth must be between 1 and 4 steps");
    if (os.hermite < 16) throw model::ConfigError("oracle needs at least 16 Gauss-Hermite nodes");
    if (os.max_jumps < 6) throw model::ConfigError("oracle needs jump counts up to at least 6");
    detail::OracleTree tree(spec, u, os.steps, os.hermite, os.max_jumps);
    OracleResult r;
    r.Y = tree.value(x0);
    r.J = -r.Y;
    detail::OracleTree fewer(spec, u, os.steps, os.hermite, os.max_jumps - 2);
    r.tail_bound = std::abs(fewer.value(x0) - r.Y);
    detail::OracleTree coarse(spec, u, os.steps, os.hermite - 4, os.max_jumps);
    r.quadrature_diff = std::abs(coarse.value(x0) - r.Y);
    if (r.tail_bound >= 1e-6 * std::abs(r.Y) && r.tail_bound > 1e-14) {
        // the change per two extra counts shrinks roughly like the Poisson tail
        const double lam = spec.jumps.nu(0) * (spec.T - spec.t0) / os.steps;
        const double ratio = detail::poisson_tail(lam, os.max_jumps) / detail::poisson_tail(lam, os.max_jumps - 2);
        int need = os.max_jumps;
        double est = r.tail_bound;
        while (need < 60 && est >= 1e-6 * std::abs(r.Y)) {
            need += 2;
            est *= ratio;
        }
        throw model::ConfigError("oracle jump truncation too coarse; use max_jumps >= " + std::to_string(need));
    }
    return r;
}

struct OracleArgmin {
    std::size_t argmin = 0;
    double J = 0.0;
    std::vector<OracleResult> table;
    /// candidates whose J lies within the combined bounds of the minimum
    std::vector<std::size_t> near_optimal;
};

inline OracleArgmin oracle_argmin(const model::ProblemSpec& spec, double x0,
                                  const std::vector<model::ControlSet::Vec>& candidates, const OracleSpec& os = {}) {
    if (candidates.empty()) throw model::ConfigError("oracle needs at least one candidate");
    OracleArgmin out;
    for (const auto& u : candidates) out.table.push_back(run_oracle(spec, x0, u, os));
    for (std::size_t c = 1; c < out.table.size(); ++c)
        if (out.table[c].J < out.table[out.argmin].J) out.argmin = c;
    out.J = out.table[out.argmin].J;
    const double eb = out.table[out.argmin].error_bound();
    for (std::size_t c = 0; c < out.table.size(); ++c)
        if (out.table[c].J <= out.J + eb + out.table[c].error_bound() + 1e-12 * std::max(1.0, std::abs(out.J)))
            out.near_optimal.push_back(c);
    return out;
}

}  // namespace fbsdep::fixtures

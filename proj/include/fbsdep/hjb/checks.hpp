#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "fbsdep/adjoint/solve.hpp"
#include "fbsdep/hjb/hamiltonian.hpp"

namespace fbsdep::hjb {

/// max over the control grid of G; ties (within 1e-12 relative) go to the
/// smallest control.
struct SupG {
    double value = -std::numeric_limits<double>::infinity();
    ControlVec argmax{};
    /// max |second difference| / 4 over interior points of a scalar grid:
    /// twice the usual h^2 |G''| / 8 bound on sup over U minus the grid max.
    /// NaN for vector controls.
    double gap_bound = 0.0;
};

namespace detail {
template <class Fn>
SupG grid_max(const model::ControlSet& U, Fn&& fn) {
    // the grid is sorted, so the first near-maximal point is the smallest
    const auto& grid = U.grid();
    std::vector<double> vals(grid.size());
    SupG out;
    for (std::size_t j = 0; j < grid.size(); ++j) {
        vals[j] = fn(grid[j]);
        out.value = std::max(out.value, vals[j]);
    }
    const double tie = 1e-12 * std::max(1.0, std::abs(out.value));
    for (std::size_t j = 0; j < grid.size(); ++j)
        if (vals[j] >= out.value - tie) {
            out.argmax = grid[j];
            break;
        }
    if (U.dim() != 1) {
        out.gap_bound = std::numeric_limits<double>::quiet_NaN();
        return out;
    }
    // equal spacing on both sides marks an interior point of one interval
    for (std::size_t j = 1; j + 1 < grid.size(); ++j) {
        const double h1 = grid[j][0] - grid[j - 1][0], h2 = grid[j + 1][0] - grid[j][0];
        if (std::abs(h1 - h2) > 1e-9 * std::max(h1, h2)) continue;
        out.gap_bound = std::max(out.gap_bound, std::abs(vals[j - 1] - 2 * vals[j] + vals[j + 1]) / 4.0);
    }
    return out;
}
}  // namespace detail

inline SupG maximize_G(const ScalarProblem& pr, const ValueCandidate& V, const Derivatives& d, double t, double x) {
    return detail::grid_max(pr.spec().controls, [&](const ControlVec& u) { return eval_G(pr, V, d, t, x, u); });
}

struct ResidualPoint {
    double t = 0, x = 0;
    double v_t = 0, sup_G = 0, residual = 0, gap_bound = 0;
    ControlVec argmax{};
    bool one_sided = false;
    std::string error;  // domain error text, residual NaN
};

struct ResidualField {
    std::vector<ResidualPoint> points;
    std::vector<double> terminal_x, terminal_mismatch;  // V(T, x) + phi(x)
    std::size_t errors = 0;

    double max_abs_residual() const {
        double m = 0;
        for (const auto& p : points)
            if (p.error.empty()) m = std::max(m, std::abs(p.residual));
        return m;
    }
    double max_terminal_mismatch() const {
        double m = 0;
        for (double v : terminal_mismatch) m = std::max(m, std::abs(v));
        return m;
    }
};

/// -V_t + max_grid G at every (t, x) of the product grid, plus the
/// terminal mismatch along xs.
inline ResidualField hjb_residual(const ScalarProblem& pr, const ValueCandidate& V, const std::vector<double>& ts,
                                  const std::vector<double>& xs) {
    ResidualField out;
    for (double t : ts)
        for (double x : xs) {
            ResidualPoint p;
            p.t = t;
            p.x = x;
            try {
                const auto d = V.derivatives(t, x);
                p.one_sided = d.one_sided;
                p.v_t = d.v_t;
                const auto sg = maximize_G(pr, V, d, t, x);
                p.sup_G = sg.value;
                p.argmax = sg.argmax;
                p.gap_bound = sg.gap_bound;
                p.residual = -d.v_t + sg.value;
            } catch (const model::DomainError& e) {
                p.error = e.what();
                p.residual = std::numeric_limits<double>::quiet_NaN();
                ++out.errors;
            }
            out.points.push_back(std::move(p));
        }
    const double T = pr.spec().T;
    for (double x : xs) {
        out.terminal_x.push_back(x);
        try {
            out.terminal_mismatch.push_back(V.value(T, x) + pr.phi(x));
        } catch (const model::DomainError&) {
            out.terminal_mismatch.push_back(std::numeric_limits<double>::quiet_NaN());
            ++out.errors;
        }
    }
    return out;
}

/// Subsample of (node, path) pairs with node < N, evenly strided over the
/// valid rows (and over the pairs `include` keeps, when given); deterministic.
inline std::vector<std::pair<int, std::size_t>> sample_pairs(const pathsim::PathBatch& pb, std::size_t count,
                                                             const std::function<bool(int, std::size_t)>& include = {}) {
    const auto rows = pb.valid_paths();
    const auto N = static_cast<std::size_t>(pb.grid.N);
    std::vector<std::size_t> kept;  // flat index row * N + k
    if (include)
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t k = 0; k < N; ++k)
                if (include(static_cast<int>(k), rows[r])) kept.push_back(r * N + k);
    const std::size_t total = include ? kept.size() : rows.size() * N;
    std::vector<std::pair<int, std::size_t>> out;
    if (total == 0 || count == 0) return out;
    const std::size_t n = std::min(count, total);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t idx = (j * total) / n + (total / n) / 2;
        const std::size_t at = include ? kept[std::min(idx, total - 1)] : std::min(idx, total - 1);
        out.emplace_back(static_cast<int>(at % N), rows[at / N]);
    }
    return out;
}

/// Trajectory values at (k, i) packed for H and the trajectory Hamiltonian.
inline HamiltonianContext trajectory_context(const ScalarProblem& pr, const adjoint::Trajectory& tr,
                                             const adjoint::AdjointField& first, const adjoint::AdjointField& second,
                                             int k, std::size_t i) {
    const auto& pb = tr.pb();
    const std::size_t K = pr.marks();
    auto c = HamiltonianContext::zeros(K);
    const auto& Y = tr.solution.fields;
    c.s = pb.grid.node(k);
    c.x = pb.x(k, i);
    c.y = Y.y(k, i);
    c.z = Y.z(k, i);
    c.p = first.fields.y(k, i);
    c.q = first.fields.z(k, i);
    c.P = second.fields.y(k, i);
    const auto ubar = pb.control(k, i);
    c.sigma_bar = pr.sigma(c.s, c.x, ubar);
    for (std::size_t m = 0; m < K; ++m) {
        c.zt[m] = Y.zt(k, i, static_cast<int>(m));
        c.qt[m] = first.fields.zt(k, i, static_cast<int>(m));
        c.Qt[m] = second.fields.zt(k, i, static_cast<int>(m));
        c.f_bar[m] = pr.f(c.s, c.x, ubar, m);
    }
    return c;
}

struct MPReport {
    std::size_t samples = 0;
    double quantile = 0.05;
    double q_low = 0.0;        // quantile of min_u H(u) - H(u_bar)
    double q_low_reversed = 0.0;  // same quantile of min_u H(u_bar) - H(u)
    double rms_H = 0.0;
    double epsilon = 0.0;
    double fraction_below = 0.0;  // share of samples with min_u H(u) - H(u_bar) < -epsilon
    bool pass = false;
};

struct MPOptions {
    std::size_t samples = 2000;
    double quantile = 0.05;
    double epsilon_factor = 0.05;
};

namespace detail {
inline double quantile_of(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}
}  // namespace detail

/// min over the control grid of H(u) - H(u_bar) along the trajectory, on a
/// deterministic subsample of (node, path) pairs.
inline MPReport check_maximum_condition(const ScalarProblem& pr, const adjoint::Trajectory& tr,
                                        const adjoint::AdjointField& first, const adjoint::AdjointField& second,
                                        const MPOptions& opt = {}) {
    MPReport r;
    r.quantile = opt.quantile;
    const auto& grid = pr.spec().controls.grid();
    std::vector<double> lows, highs;
    double sq = 0;
    for (const auto& [k, i] : sample_pairs(tr.pb(), opt.samples)) {
        const auto ctx = trajectory_context(pr, tr, first, second, k, i);
        const double Hbar = eval_H(pr, ctx, tr.pb().control(k, i));
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& u : grid) {
            const double d = eval_H(pr, ctx, u) - Hbar;
            lo = std::min(lo, d);
            hi = std::max(hi, d);
        }
        lows.push_back(lo);
        highs.push_back(-hi);
        sq += Hbar * Hbar;
    }
    r.samples = lows.size();
    if (r.samples == 0) return r;
    r.rms_H = std::sqrt(sq / static_cast<double>(r.samples));
    r.epsilon = opt.epsilon_factor * r.rms_H;
    r.q_low = detail::quantile_of(lows, opt.quantile);
    r.q_low_reversed = detail::quantile_of(highs, opt.quantile);
    r.fraction_below = static_cast<double>(std::count_if(lows.begin(), lows.end(),
                                                         [&](double v) { return v < -r.epsilon; })) /
                       static_cast<double>(r.samples);
    r.pass = r.q_low >= -r.epsilon;
    return r;
}

struct SmoothRelationReport {
    // worst node of the batch-RMS residual
    double p_residual = 0;   // p + V_x
    double q_residual = 0;   // q + V_xx sigma_bar
    double qt_residual = 0;  // qt + V_x(X + f_bar) - V_x(X), worst mark
    // -V_xx - P over valid (node, path) samples
    double gap_min = 0;
    double gap_max_abs = 0;
    double gap_positive_fraction = 0;  // -V_xx - P > 0
    double gap_nonneg_fraction = 0;    // -V_xx - P >= -eps_psd
    double flipped_positive_fraction = 0;  // V_xx - P > 0
    // V_t - G(u_bar) and max G - G(u_bar) where V_t exists
    double stationarity_residual = 0;
    double sup_gap = 0;
    std::size_t samples = 0, excluded = 0;
    bool inconclusive = false;
};

struct SmoothRelationOptions {
    double eps_psd = 1e-10;
    std::size_t stationarity_samples = 500;
    /// optional filter on (node, path); rejected samples count as excluded
    std::function<bool(int, std::size_t)> include;
};

/// Relations between the adjoints and derivatives of a smooth candidate
/// along the trajectory; samples within 1e-9 of a breakpoint are excluded.
inline SmoothRelationReport check_smooth_relations(const ScalarProblem& pr, const adjoint::Trajectory& tr,
                                                   const adjoint::AdjointField& first,
                                                   const adjoint::AdjointField& second, const ValueCandidate& V,
                                                   const SmoothRelationOptions& opt = {}) {
    SmoothRelationReport r;
    const auto& pb = tr.pb();
    const int N = pb.grid.N;
    const std::size_t K = pr.marks();
    const auto rows = pb.valid_paths();
    std::size_t pos = 0, nonneg = 0, flipped = 0;
    r.gap_min = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= N; ++k) {
        double sp = 0, sq = 0;
        std::vector<double> sqt(K, 0.0);
        std::vector<std::size_t> nqt(K, 0);
        std::size_t n = 0;
        const double s = pb.grid.node(k);
        for (std::size_t i : rows) {
            const double x = pb.x(k, i);
            if (!V.smooth_at(s, x) || (opt.include && !opt.include(k, i))) {
                ++r.excluded;
                continue;
            }
            ++r.samples;
            const auto d = V.derivatives(s, x);
            const double gap = -d.v_xx - second.fields.y(k, i);
            r.gap_min = std::min(r.gap_min, gap);
            r.gap_max_abs = std::max(r.gap_max_abs, std::abs(gap));
            pos += gap > 0 ? 1 : 0;
            nonneg += gap >= -opt.eps_psd ? 1 : 0;
            flipped += d.v_xx - second.fields.y(k, i) > 0 ? 1 : 0;
            if (k == N) continue;
            ++n;
            const auto ubar = pb.control(k, i);
            sp += std::pow(first.fields.y(k, i) + d.v_x, 2);
            sq += std::pow(first.fields.z(k, i) + d.v_xx * pr.sigma(s, x, ubar), 2);
            for (std::size_t m = 0; m < K; ++m) {
                const double xs = x + pr.f(s, x, ubar, m);
                // V_x does not exist where the jump lands on a breakpoint
                if (!V.smooth_at(s, xs)) continue;
                const double vx_shift = V.derivatives(s, xs).v_x;
                sqt[m] += std::pow(first.fields.zt(k, i, static_cast<int>(m)) + vx_shift - d.v_x, 2);
                ++nqt[m];
            }
        }
        if (n == 0) continue;
        const double dn = static_cast<double>(n);
        r.p_residual = std::max(r.p_residual, std::sqrt(sp / dn));
        r.q_residual = std::max(r.q_residual, std::sqrt(sq / dn));
        for (std::size_t m = 0; m < K; ++m)
            if (nqt[m]) r.qt_residual = std::max(r.qt_residual, std::sqrt(sqt[m] / static_cast<double>(nqt[m])));
    }
    if (r.samples > 0) {
        r.gap_positive_fraction = static_cast<double>(pos) / static_cast<double>(r.samples);
        r.gap_nonneg_fraction = static_cast<double>(nonneg) / static_cast<double>(r.samples);
        r.flipped_positive_fraction = static_cast<double>(flipped) / static_cast<double>(r.samples);
    } else {
        r.gap_min = 0;
    }
    const double total = static_cast<double>(r.samples + r.excluded);
    r.inconclusive = total == 0 || static_cast<double>(r.excluded) > 0.2 * total;

    double st = 0, sg = 0;
    std::size_t ns = 0;
    for (const auto& [k, i] : sample_pairs(pb, opt.stationarity_samples, opt.include)) {
        const double s = pb.grid.node(k), x = pb.x(k, i);
        if (!V.smooth_at(s, x) || (opt.include && !opt.include(k, i))) continue;
        const auto d = V.derivatives(s, x);
        const double Gbar = eval_G(pr, V, d, s, x, pb.control(k, i));
        const auto sup = maximize_G(pr, V, d, s, x);
        st += std::pow(d.v_t - Gbar, 2);
        sg += std::pow(sup.value - Gbar, 2);
        ++ns;
    }
    if (ns > 0) {
        r.stationarity_residual = std::sqrt(st / static_cast<double>(ns));
        r.sup_gap = std::sqrt(sg / static_cast<double>(ns));
    }
    return r;
}

}  // namespace fbsdep::hjb

#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "fbsdep/bsde/regression.hpp"
#include "fbsdep/pathsim/simulate.hpp"

namespace fbsdep::bsde {

/// (Y, Z, Ztilde) on a path batch. Y is (N+1) x M, Z is N x M and Zt is
/// N x M x marks, all node-major; invalid paths hold NaN.
struct BackwardFields {
    int N = 0;
    std::size_t M = 0;
    int marks = 1;
    std::vector<double> Y, Z, Zt;
    std::vector<double> cond;      // per step
    std::vector<double> residual;  // per step, RMS of the martingale-corrected fit
    std::vector<int> basis_size;   // per step

    double y(int k, std::size_t i) const { return Y[static_cast<std::size_t>(k) * M + i]; }
    double z(int k, std::size_t i) const { return Z[static_cast<std::size_t>(k) * M + i]; }
    double zt(int k, std::size_t i, int m) const {
        return Zt[(static_cast<std::size_t>(k) * M + i) * marks + m];
    }
    const double* zt_row(int k, std::size_t i) const { return &Zt[(static_cast<std::size_t>(k) * M + i) * marks]; }
};

struct BackwardOptions {
    bool refine = true;
    double cond_limit = 1e12;
};

/// Backward induction on a simulated batch.
///   terminal[i]          Y_N on path i (valid paths)
///   driver(k, i, y, z, zt) the generator F at node k (zt per mark)
///   h                    optional (N+1) x M weights that augment the basis
/// At each step the joint regression of Y_{k+1} gives Z_k, Ztilde_k and
/// the martingale increment; Y_k = E[Y_{k+1} + F(Y_{k+1}, Z_k, Zt_k) dt | X_k],
/// then once more with the first estimate of Y_k inside F when refining.
template <class Driver>
BackwardFields backward_induction(const pathsim::PathBatch& pb, const model::JumpSpec& jumps,
                                  const std::vector<double>& terminal,
                                  const BasisSpec& basis, Driver&& driver, const BackwardOptions& opt = {},
                                  const std::vector<double>* h = nullptr) {
    const int N = pb.grid.N, marks = pb.marks, n = pb.n;
    const std::size_t M = pb.M;
    const double dt = pb.grid.dt();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    BackwardFields out;
    out.N = N;
    out.M = M;
    out.marks = marks;
    out.Y.assign(static_cast<std::size_t>(N + 1) * M, nan);
    out.Z.assign(static_cast<std::size_t>(N) * M, nan);
    out.Zt.assign(static_cast<std::size_t>(N) * M * marks, nan);
    out.cond.assign(static_cast<std::size_t>(N), 0.0);
    out.residual.assign(static_cast<std::size_t>(N), 0.0);
    out.basis_size.assign(static_cast<std::size_t>(N), 0);

    const std::vector<std::size_t> rows = pb.valid_paths();
    const std::size_t R = rows.size();
    if (R == 0) throw RegressionError("no valid paths");
    for (std::size_t r = 0; r < R; ++r) {
        const double v = terminal[rows[r]];
        if (!std::isfinite(v)) throw RegressionError("non-finite terminal value on path " + std::to_string(rows[r]));
        out.Y[static_cast<std::size_t>(N) * M + rows[r]] = v;
    }

    std::vector<double> state(R * static_cast<std::size_t>(n)), hrow;
    if (static_cast<int>(jumps.mark_count()) != marks) throw model::ConfigError("jump spec does not match batch");

    for (int k = N - 1; k >= 0; --k) {
        for (std::size_t r = 0; r < R; ++r)
            for (int j = 0; j < n; ++j) state[r * n + j] = pb.x(k, rows[r], j);
        if (h) {
            hrow.resize(R);
            for (std::size_t r = 0; r < R; ++r) hrow[r] = (*h)[static_cast<std::size_t>(k) * M + rows[r]];
        }
        const FeatureMatrix fm(basis, pb.grid.node(k), n, state, h ? &hrow : nullptr);
        Eigen::VectorXd dW(static_cast<Eigen::Index>(R)), ynext(static_cast<Eigen::Index>(R));
        Eigen::MatrixXd comp(static_cast<Eigen::Index>(R), marks);
        std::vector<int> jump_rows(static_cast<std::size_t>(marks), 0);
        for (std::size_t r = 0; r < R; ++r) {
            const auto e = static_cast<Eigen::Index>(r);
            dW(e) = pb.dw(k, rows[r]);
            ynext(e) = out.y(k + 1, rows[r]);
            for (int m = 0; m < marks; ++m) {
                const int c = pb.count(k, rows[r], m);
                jump_rows[static_cast<std::size_t>(m)] += c > 0 ? 1 : 0;
                comp(e, m) = c - jumps.nu(static_cast<std::size_t>(m)) * dt;
            }
        }
        const NodeRegression reg(fm.psi(), fm.mark_psi(), dW, comp, jump_rows, k, opt.cond_limit);
        out.cond[static_cast<std::size_t>(k)] = reg.condition();
        out.basis_size[static_cast<std::size_t>(k)] = static_cast<int>(fm.size());

        const auto first = reg.fit(ynext);
        out.residual[static_cast<std::size_t>(k)] = first.residual_rms;
        Eigen::VectorXd target(static_cast<Eigen::Index>(R));
        std::vector<double> ztv(static_cast<std::size_t>(marks));
        for (std::size_t r = 0; r < R; ++r) {
            const auto e = static_cast<Eigen::Index>(r);
            const std::size_t i = rows[r];
            out.Z[static_cast<std::size_t>(k) * M + i] = first.dw(e);
            for (int m = 0; m < marks; ++m) {
                ztv[static_cast<std::size_t>(m)] = first.marks[static_cast<std::size_t>(m)](e);
                out.Zt[(static_cast<std::size_t>(k) * M + i) * marks + m] = ztv[static_cast<std::size_t>(m)];
            }
            target(e) = ynext(e) + driver(k, i, ynext(e), first.dw(e), ztv.data()) * dt;
        }
        const auto second = reg.fit(target);
        for (std::size_t r = 0; r < R; ++r) {
            const auto e = static_cast<Eigen::Index>(r);
            const std::size_t i = rows[r];
            double yk = second.mean(e);
            if (opt.refine) {
                for (int m = 0; m < marks; ++m) ztv[static_cast<std::size_t>(m)] = first.marks[static_cast<std::size_t>(m)](e);
                yk = first.mean(e) + driver(k, i, yk, first.dw(e), ztv.data()) * dt;
            }
            if (!std::isfinite(yk)) throw RegressionError("step " + std::to_string(k) + ": non-finite Y");
            out.Y[static_cast<std::size_t>(k) * M + i] = yk;
        }
    }
    return out;
}

}  // namespace fbsdep::bsde

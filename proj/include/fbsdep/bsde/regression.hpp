#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "fbsdep/model/compiled.hpp"
#include "fbsdep/model/problem.hpp"

namespace fbsdep::bsde {

/// Ill-conditioned or non-finite regression.
class RegressionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Polynomial degree in the standardized state plus optional extra
/// functions of (s, x).
struct BasisSpec {
    int degree = 3;
    std::vector<model::Expr> extra;
    /// degree of the functions multiplying the jump-count columns; -1 uses
    /// `degree`. Extra functions are left out of that block when it is set.
    int mark_degree = -1;
};

/// Regressors psi(X_k) (optionally tensored with {1, h_k}) for one node,
/// over the rows of the valid paths.
class FeatureMatrix {
public:
    /// `state` is rows x n (row-major), `h` is optional per-row weights.
    FeatureMatrix(const BasisSpec& spec, double s, int n, const std::vector<double>& state,
                  const std::vector<double>* h = nullptr) {
        if (spec.degree < 0) throw model::ConfigError("basis degree must be non-negative");
        const std::size_t rows = n ? state.size() / static_cast<std::size_t>(n) : 0;
        std::vector<std::vector<double>> base;  // standardized non-degenerate columns
        for (int j = 0; j < n; ++j) {
            std::vector<double> c(rows);
            for (std::size_t r = 0; r < rows; ++r) c[r] = state[r * n + j];
            if (standardize(c)) base.push_back(std::move(c));
        }
        // monomials of total degree 1..d, graded
        std::vector<std::vector<double>> cols;
        std::vector<int> degs{0};
        cols.emplace_back(rows, 1.0);
        std::vector<std::vector<int>> exps{std::vector<int>(base.size(), 0)};
        for (int deg = 1; deg <= spec.degree && !base.empty(); ++deg) {
            std::vector<std::vector<int>> next;
            for_each_exponent(static_cast<int>(base.size()), deg, [&](const std::vector<int>& e) { next.push_back(e); });
            for (const auto& e : next) {
                std::vector<double> c(rows, 1.0);
                for (std::size_t v = 0; v < base.size(); ++v)
                    for (int p = 0; p < e[v]; ++p)
                        for (std::size_t r = 0; r < rows; ++r) c[r] *= base[v][r];
                if (standardize(c, false)) {
                    cols.push_back(std::move(c));
                    degs.push_back(deg);
                }
            }
        }
        for (const auto& ex : spec.extra) {
            const model::CompiledExpr f(ex);
            std::vector<double> c(rows);
            for (std::size_t r = 0; r < rows; ++r) {
                model::Point p;
                p.s() = s;
                for (int j = 0; j < n; ++j) p.x(j) = state[r * n + j];
                c[r] = f(p);
            }
            if (standardize(c)) {
                cols.push_back(std::move(c));
                degs.push_back(spec.degree + 1);
            }
        }
        const int md = spec.mark_degree < 0 ? std::numeric_limits<int>::max() : spec.mark_degree;
        if (h) {
            std::vector<double> hc(*h);
            if (standardize(hc)) {
                const std::size_t base_cols = cols.size();
                for (std::size_t c = 0; c < base_cols; ++c) {
                    std::vector<double> col(rows);
                    for (std::size_t r = 0; r < rows; ++r) col[r] = cols[c][r] * hc[r];
                    cols.push_back(std::move(col));
                    degs.push_back(degs[c]);
                }
                augmented_ = true;
            }
        }
        psi_.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t c = 0; c < cols.size(); ++c)
            for (std::size_t r = 0; r < rows; ++r) psi_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = cols[c][r];
        std::vector<Eigen::Index> low;
        for (std::size_t c = 0; c < cols.size(); ++c)
            if (degs[c] <= md) low.push_back(static_cast<Eigen::Index>(c));
        mark_psi_ = psi_(Eigen::all, low);
    }

    const Eigen::MatrixXd& psi() const { return psi_; }
    /// columns of psi used with the jump counts
    const Eigen::MatrixXd& mark_psi() const { return mark_psi_; }
    Eigen::Index size() const { return psi_.cols(); }
    bool augmented() const { return augmented_; }

private:
    /// Center/scale in place; false if the column is (numerically) constant.
    static bool standardize(std::vector<double>& c, bool center = true) {
        if (c.empty()) return false;
        double mean = 0.0;
        for (double v : c) mean += v;
        mean /= static_cast<double>(c.size());
        double var = 0.0;
        for (double v : c) var += (v - mean) * (v - mean);
        var /= static_cast<double>(c.size());
        const double sd = std::sqrt(var);
        if (!(sd > 1e-10 * std::max(1.0, std::abs(mean)))) return false;
        const double shift = center ? mean : 0.0;
        const double scale = center ? sd : std::sqrt(var + mean * mean);
        for (double& v : c) v = (v - shift) / scale;
        return true;
    }

    template <class F>
    static void for_each_exponent(int vars, int degree, F&& f) {
        std::vector<int> e(static_cast<std::size_t>(vars), 0);
        auto rec = [&](auto&& self, int v, int left) -> void {
            if (v == vars - 1) {
                e[static_cast<std::size_t>(v)] = left;
                f(e);
                return;
            }
            for (int p = left; p >= 0; --p) {
                e[static_cast<std::size_t>(v)] = p;
                self(self, v + 1, left - p);
            }
        };
        rec(rec, 0, degree);
    }

    Eigen::MatrixXd psi_, mark_psi_;
    bool augmented_ = false;
};

/// Joint least squares of a target on [psi, psi*dW, psi*Nc_1, ...] where
/// Nc_m = N_m - nu_m dt is the compensated jump count of mark m. Because the
/// increment columns are orthogonal to functions of X, the psi block
/// estimates E[target | X_k], the dW block E[target dW | X_k] / dt and the
/// mark-m block E[target Nc_m | X_k] / (nu_m dt).
class NodeRegression {
public:
    struct Blocks {
        Eigen::VectorXd mean;                 // rows
        Eigen::VectorXd dw;                   // rows
        std::vector<Eigen::VectorXd> marks;   // per mark, rows
        double residual_rms = 0.0;
    };

    NodeRegression(const Eigen::MatrixXd& psi, const Eigen::VectorXd& dW, const Eigen::MatrixXd& comp_counts,
                   const std::vector<int>& jump_rows, int step, double cond_limit = 1e12)
        : NodeRegression(psi, psi, dW, comp_counts, jump_rows, step, cond_limit) {}

    /// `mark_psi` multiplies the jump-count columns.
    NodeRegression(const Eigen::MatrixXd& psi, const Eigen::MatrixXd& mark_psi, const Eigen::VectorXd& dW,
                   const Eigen::MatrixXd& comp_counts, const std::vector<int>& jump_rows, int step,
                   double cond_limit = 1e12)
        : psi_(psi), mark_psi_(mark_psi), step_(step) {
        const Eigen::Index rows = psi.rows(), nb = psi.cols(), mb = mark_psi.cols();
        const int marks = static_cast<int>(comp_counts.cols());
        mark_sel_.assign(static_cast<std::size_t>(marks), {});
        Eigen::Index p = 2 * nb;
        for (int m = 0; m < marks; ++m) {
            const int jr = jump_rows[static_cast<std::size_t>(m)];
            auto& sel = mark_sel_[static_cast<std::size_t>(m)];
            if (jr >= 10 * mb && mb > 1)
                sel = independent_on_jumps(mark_psi, comp_counts.col(m));
            else if (jr >= 1)
                sel = {0};  // constant column; psi's first column is 1
            p += static_cast<Eigen::Index>(sel.size());
        }
        D_.resize(rows, p);
        D_.leftCols(nb) = psi;
        D_.middleCols(nb, nb) = psi.array().colwise() * dW.array();
        Eigen::Index c = 2 * nb;
        for (int m = 0; m < marks; ++m) {
            for (Eigen::Index j : mark_sel_[static_cast<std::size_t>(m)])
                D_.col(c++) = mark_psi.col(j).cwiseProduct(comp_counts.col(m));
        }
        scale_ = (D_.colwise().squaredNorm() / static_cast<double>(rows)).cwiseSqrt();
        for (Eigen::Index j = 0; j < p; ++j) {
            if (!(scale_(j) > 0.0)) throw RegressionError("step " + std::to_string(step) + ": zero regressor column");
            D_.col(j) /= scale_(j);
        }
        const Eigen::MatrixXd G = (D_.transpose() * D_) / static_cast<double>(rows);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
        if (es.info() != Eigen::Success) throw RegressionError("step " + std::to_string(step) + ": eigen solve failed");
        const double lmax = es.eigenvalues().maxCoeff(), lmin = es.eigenvalues().minCoeff();
        cond_ = lmin > 0 ? lmax / lmin : std::numeric_limits<double>::infinity();
        if (!(cond_ <= cond_limit))
            throw RegressionError("step " + std::to_string(step) + ": regression condition number " +
                                  std::to_string(cond_) + " exceeds limit");
        V_ = es.eigenvectors();
        inv_eval_ = es.eigenvalues().cwiseInverse();
        rows_ = rows;
    }

    double condition() const { return cond_; }
    Eigen::Index columns() const { return D_.cols(); }
    /// number of jump-count columns per mark
    std::vector<int> mark_columns() const {
        std::vector<int> out;
        for (const auto& sel : mark_sel_) out.push_back(static_cast<int>(sel.size()));
        return out;
    }

    Blocks fit(const Eigen::VectorXd& y) const {
        if (!y.allFinite()) throw RegressionError("step " + std::to_string(step_) + ": non-finite regression target");
        const Eigen::VectorXd rhs = D_.transpose() * y / static_cast<double>(rows_);
        const Eigen::VectorXd coef = V_ * (inv_eval_.asDiagonal() * (V_.transpose() * rhs));
        if (!coef.allFinite()) throw RegressionError("step " + std::to_string(step_) + ": non-finite coefficients");
        const Eigen::Index nb = psi_.cols();
        Eigen::VectorXd c = coef.cwiseQuotient(scale_);
        Blocks out;
        out.mean = psi_ * c.head(nb);
        out.dw = psi_ * c.segment(nb, nb);
        Eigen::Index off = 2 * nb;
        for (const auto& sel : mark_sel_) {
            Eigen::VectorXd v = Eigen::VectorXd::Zero(rows_);
            for (Eigen::Index j : sel) v += mark_psi_.col(j) * c(off++);
            out.marks.push_back(std::move(v));
        }
        const Eigen::VectorXd resid = y - D_ * coef;
        out.residual_rms = std::sqrt(resid.squaredNorm() / static_cast<double>(rows_));
        return out;
    }

private:
    /// Columns of mark_psi that are linearly independent on the rows with a
    /// jump. On the other rows psi_j * Nc = -nu dt psi_j, so a column that is
    /// a combination of the others on the jump rows duplicates the psi block
    /// (e.g. a dual weight that every jump resets to zero).
    static std::vector<Eigen::Index> independent_on_jumps(const Eigen::MatrixXd& mark_psi, const Eigen::VectorXd& comp) {
        const double floor = comp.minCoeff();
        std::vector<Eigen::Index> jr;
        for (Eigen::Index r = 0; r < comp.size(); ++r)
            if (comp(r) > floor + 0.5) jr.push_back(r);
        Eigen::MatrixXd J = mark_psi(jr, Eigen::all);
        for (Eigen::Index j = 0; j < J.cols(); ++j) {
            const double n = J.col(j).norm();
            if (n > 0) J.col(j) /= n;
        }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(J);
        qr.setThreshold(1e-9);
        std::vector<Eigen::Index> sel;
        for (Eigen::Index i = 0; i < qr.rank(); ++i) sel.push_back(qr.colsPermutation().indices()(i));
        std::sort(sel.begin(), sel.end());
        return sel;
    }

    Eigen::MatrixXd psi_, mark_psi_;
    Eigen::MatrixXd D_;
    Eigen::VectorXd scale_;
    Eigen::MatrixXd V_;
    Eigen::VectorXd inv_eval_;
    std::vector<std::vector<Eigen::Index>> mark_sel_;
    Eigen::Index rows_ = 0;
    double cond_ = 1.0;
    int step_ = 0;
};

}  // namespace fbsdep::bsde

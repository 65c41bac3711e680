#pragma once

#include <array>
#include <vector>

#include "fbsdep/bsde/solver.hpp"
#include "fbsdep/model/compiled.hpp"
#include "fbsdep/model/problem.hpp"
#include "fbsdep/pathsim/simulate.hpp"

namespace fbsdep::adjoint {

struct MarkCoeffs {
    double nu = 0, fx = 0, fxx = 0, fbar = 0;
};

/// Coefficient derivatives frozen along the trajectory at one (node, path),
/// scalar state. D2g is the Hessian of g in (x, y, z, ztilde).
struct NodeCoeffs {
    double bx = 0, bxx = 0, sx = 0, sxx = 0;
    double gx = 0, gy = 0, gz = 0, gzt = 0;
    std::array<std::array<double, 4>, 4> D2g{};
    double b_bar = 0, sigma_bar = 0;
    const MarkCoeffs* marks = nullptr;
    int nmarks = 0;
};

/// Compiled derivative trees of a scalar-state problem.
class CoefficientSet {
public:
    explicit CoefficientSet(const model::ProblemSpec& spec) : spec_(spec) {
        if (spec.n != 1) throw model::ConfigError("adjoint systems are implemented for scalar state only");
        const auto d = model::differentiate_spec(spec);
        b_ = model::CompiledExpr(spec.b[0]);
        s_ = model::CompiledExpr(spec.sigma[0]);
        f_ = model::CompiledExpr(spec.f[0]);
        bx_ = model::CompiledExpr(d.b_x[0][0]);
        bxx_ = model::CompiledExpr(d.b_xx[0][0][0]);
        sx_ = model::CompiledExpr(d.sigma_x[0][0]);
        sxx_ = model::CompiledExpr(d.sigma_xx[0][0][0]);
        fx_ = model::CompiledExpr(d.f_x[0][0]);
        fxx_ = model::CompiledExpr(d.f_xx[0][0][0]);
        phix_ = model::CompiledExpr(d.phi_x[0]);
        phixx_ = model::CompiledExpr(d.phi_xx[0][0]);
        for (int a = 0; a < 4; ++a) {
            grad_[static_cast<std::size_t>(a)] = model::CompiledExpr(d.g_grad[static_cast<std::size_t>(a)]);
            for (int c = 0; c < 4; ++c)
                hess_[static_cast<std::size_t>(a)][static_cast<std::size_t>(c)] =
                    model::CompiledExpr(d.g_hess[static_cast<std::size_t>(a)][static_cast<std::size_t>(c)]);
        }
    }

    const model::ProblemSpec& spec() const { return spec_; }
    std::size_t marks() const { return spec_.jumps.mark_count(); }

    /// Evaluates at (s, x, y, z, int zt nu, u); mark data written to `buf`.
    NodeCoeffs evaluate(const model::Point& at, MarkCoeffs* buf) const {
        NodeCoeffs c;
        c.bx = bx_(at);
        c.bxx = bxx_(at);
        c.sx = sx_(at);
        c.sxx = sxx_(at);
        c.gx = grad_[0](at);
        c.gy = grad_[1](at);
        c.gz = grad_[2](at);
        c.gzt = grad_[3](at);
        for (std::size_t a = 0; a < 4; ++a)
            for (std::size_t b = 0; b < 4; ++b) c.D2g[a][b] = hess_[a][b](at);
        c.b_bar = b_(at);
        c.sigma_bar = s_(at);
        model::Point pe = at;
        for (std::size_t m = 0; m < marks(); ++m) {
            pe.e() = spec_.jumps.marks[m].value;
            buf[m] = {spec_.jumps.nu(m), fx_(pe), fxx_(pe), f_(pe)};
        }
        c.marks = buf;
        c.nmarks = static_cast<int>(marks());
        return c;
    }

    double phi_x(double x) const { return phix_(state(x)); }
    double phi_xx(double x) const { return phixx_(state(x)); }

private:
    static model::Point state(double x) {
        model::Point p;
        p.x(0) = x;
        return p;
    }

    model::ProblemSpec spec_;
    model::CompiledExpr b_, s_, f_, bx_, bxx_, sx_, sxx_, fx_, fxx_, phix_, phixx_;
    std::array<model::CompiledExpr, 4> grad_;
    std::array<std::array<model::CompiledExpr, 4>, 4> hess_;
};

/// Optimal trajectory: path batch under the optimal policy plus the solved
/// (Y, Z, Z-tilde).
struct Trajectory {
    const pathsim::PathBatch* batch = nullptr;
    bsde::BackwardSolution solution;

    const pathsim::PathBatch& pb() const { return *batch; }
};

inline Trajectory make_trajectory(const model::ProblemSpec& spec, const pathsim::PathBatch& pb,
                                  const bsde::BasisSpec& basis = {}) {
    return {&pb, bsde::solve_backward(spec, pb, basis)};
}

/// Coefficients at every path of one node, recomputed when the node changes.
class NodeCache {
public:
    NodeCache(const CoefficientSet& cs, const Trajectory& tr) : cs_(cs), tr_(tr) {}

    const NodeCoeffs& at(int k, std::size_t i) {
        if (k != k_) fill(k);
        return nodes_[i];
    }

private:
    void fill(int k) {
        const auto& pb = tr_.pb();
        const std::size_t K = cs_.marks();
        nodes_.assign(pb.M, NodeCoeffs{});
        marks_.assign(pb.M * K, MarkCoeffs{});
        const auto& f = tr_.solution.fields;
        for (std::size_t i = 0; i < pb.M; ++i) {
            if (!pb.valid[i]) continue;
            model::Point p;
            p.s() = pb.grid.node(k);
            p.x(0) = pb.x(k, i);
            for (int j = 0; j < pb.kdim; ++j) p.u(j) = pb.u(k, i, j);
            p.y() = f.y(k, i);
            if (k < f.N) {
                p.z() = f.z(k, i);
                double zt = 0.0;
                for (std::size_t m = 0; m < K; ++m) zt += cs_.spec().jumps.nu(m) * f.zt(k, i, static_cast<int>(m));
                p.ztilde() = zt;
            }
            nodes_[i] = cs_.evaluate(p, &marks_[i * K]);
        }
        k_ = k;
    }

    const CoefficientSet& cs_;
    const Trajectory& tr_;
    int k_ = -1;
    std::vector<NodeCoeffs> nodes_;
    std::vector<MarkCoeffs> marks_;
};

}  // namespace fbsdep::adjoint

#pragma once

#include <algorithm>
#include <stdexcept>
#include <cmath>
#include <string>
#include <vector>

#include "fbsdep/adjoint/solve.hpp"
#include "fbsdep/hjb/hamiltonian.hpp"

namespace fbsdep::adjoint {

struct RelationEntry {
    std::string name;
    double pooled = 0.0;      // RMS residual over all (node, path) / max(RMS lhs, RMS rhs)
    double worst_node = 0.0;  // same ratio at the worst node
    int worst_step = -1;
    double tolerance = 0.1;
    bool pass = false;
};

/// How the mixed f_x P f_x term of the second-order system is read.
inline constexpr const char* cross_term_reading =
    "f_x P f_x in the second-order adjoint uses f_x along the trajectory for both factors";

struct RelationReport {
    std::vector<RelationEntry> entries;
    std::vector<std::string> notes;
    bool pass() const {
        return std::all_of(entries.begin(), entries.end(), [](const RelationEntry& e) { return e.pass; });
    }
    const RelationEntry& operator[](const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return e;
        throw std::out_of_range("no relation named " + name);
    }
};

namespace detail {

class RelationAccumulator {
public:
    explicit RelationAccumulator(int nodes) : d_(nodes, 0.0), l_(nodes, 0.0), r_(nodes, 0.0) {}

    void add(int k, double lhs, double rhs) {
        const double diff = lhs - rhs;
        d_[static_cast<std::size_t>(k)] += diff * diff;
        l_[static_cast<std::size_t>(k)] += lhs * lhs;
        r_[static_cast<std::size_t>(k)] += rhs * rhs;
    }

    RelationEntry finish(std::string name, double tol) const {
        RelationEntry e;
        e.name = std::move(name);
        e.tolerance = tol;
        double D = 0, L = 0, R = 0;
        for (std::size_t k = 0; k < d_.size(); ++k) {
            D += d_[k];
            L += l_[k];
            R += r_[k];
            const double scale = std::sqrt(std::max(l_[k], r_[k]));
            if (scale > 0) {
                const double ratio = std::sqrt(d_[k]) / scale;
                if (ratio > e.worst_node) {
                    e.worst_node = ratio;
                    e.worst_step = static_cast<int>(k);
                }
            }
        }
        const double scale = std::sqrt(std::max(L, R));
        e.pooled = scale > 0 ? std::sqrt(D) / scale : 0.0;
        e.pass = e.pooled <= tol;
        return e;
    }

private:
    std::vector<double> d_, l_, r_;
};

}  // namespace detail

/// The seven identities linking the dual system to (p, q, qt), (P, Q, Qt)
/// and H* = h H, the last evaluated at the trajectory control and at the
/// two ends of the control grid.
inline RelationReport check_relations(const CoefficientSet& cs, const Trajectory& tr, const AdjointField& first,
                                      const AdjointField& second, const DualSystem& dual, double tol = 0.1) {
    const auto& pb = tr.pb();
    const int N = pb.grid.N, K = pb.marks;
    const auto& f1 = first.fields;
    const auto& f2 = second.fields;
    const auto& d1 = dual.first.fields;
    const auto& d2 = dual.second.fields;
    if (f1.M != pb.M || f2.M != pb.M || d1.M != pb.M || d2.M != pb.M || f1.N != N || d1.N != N || f2.N != N ||
        d2.N != N)
        throw model::ConfigError("relation check needs all systems on one batch");

    detail::RelationAccumulator a_p(N + 1), a_q(N), a_qt(N), a_P(N + 1), a_Q(N), a_Qt(N), a_H(N);
    NodeCache cache(cs, tr);
    const hjb::ScalarProblem pr(cs.spec());
    const auto& grid = cs.spec().controls.grid();
    const auto rows = pb.valid_paths();
    const auto& Y = tr.solution.fields;
    for (int k = 0; k <= N; ++k)
        for (std::size_t i : rows) {
            const double h = dual.h_at(k, i);
            a_p.add(k, d1.y(k, i), h * f1.y(k, i));
            a_P.add(k, d2.y(k, i), h * f2.y(k, i));
            if (k == N) continue;
            const auto& c = cache.at(k, i);
            a_q.add(k, d1.z(k, i), h * c.gz * f1.y(k, i) + h * f1.z(k, i));
            a_Q.add(k, d2.z(k, i), h * c.gz * f2.y(k, i) + h * f2.z(k, i));
            for (int m = 0; m < K; ++m) {
                a_qt.add(k, d1.zt(k, i, m), h * c.gzt * f1.y(k, i) + h * f1.zt(k, i, m) + h * c.gzt * f1.zt(k, i, m));
                a_Qt.add(k, d2.zt(k, i, m), h * c.gzt * f2.y(k, i) + h * f2.zt(k, i, m) + h * c.gzt * f2.zt(k, i, m));
            }
            auto ctx = hjb::HamiltonianContext::zeros(static_cast<std::size_t>(K));
            ctx.s = pb.grid.node(k);
            ctx.x = pb.x(k, i);
            ctx.y = Y.y(k, i);
            ctx.z = Y.z(k, i);
            for (int m = 0; m < K; ++m) ctx.zt[static_cast<std::size_t>(m)] = Y.zt(k, i, m);
            ctx.p = f1.y(k, i);
            ctx.q = f1.z(k, i);
            ctx.P = f2.y(k, i);
            ctx.h = h;
            ctx.pstar = d1.y(k, i);
            ctx.qstar = d1.z(k, i);
            ctx.Pstar = d2.y(k, i);
            ctx.sigma_bar = c.sigma_bar;
            ctx.gz_bar = c.gz;
            const auto ubar = pb.control(k, i);
            for (const auto& u : {ubar, grid.front(), grid.back()})
                a_H.add(k, hjb::eval_Hstar(pr, ctx, u), h * hjb::eval_H(pr, ctx, u));
        }
    RelationReport rep;
    rep.notes.push_back(cross_term_reading);
    rep.entries.push_back(a_p.finish("p* = h p", tol));
    rep.entries.push_back(a_q.finish("q* = h g_z p + h q", tol));
    rep.entries.push_back(a_qt.finish("qt* = h g_zt p + h qt + h g_zt qt", tol));
    rep.entries.push_back(a_P.finish("P* = h P", tol));
    rep.entries.push_back(a_Q.finish("Q* = h g_z P + h Q", tol));
    rep.entries.push_back(a_Qt.finish("Qt* = h g_zt P + h Qt + h g_zt Qt", tol));
    rep.entries.push_back(a_H.finish("H* = h H", tol));
    return rep;
}

}  // namespace fbsdep::adjoint

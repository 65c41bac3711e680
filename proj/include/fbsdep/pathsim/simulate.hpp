#pragma once

#include <atomic>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fbsdep/model/compiled.hpp"
#include "fbsdep/model/problem.hpp"
#include "fbsdep/parallel.hpp"
#include "fbsdep/pathsim/noise.hpp"
#include "fbsdep/pathsim/policy.hpp"

namespace fbsdep::pathsim {

/// One applied jump: X_after = pre + increment.
struct LedgerEntry {
    std::size_t path = 0;
    int step = 0;
    int mark = 0;
    double time = 0.0;
    std::array<double, model::max_dim> pre{};
    std::array<double, model::max_dim> increment{};
};

/// Simulated batch. States are node-major: X[(k*M + i)*n + j] for nodes
/// 0..N, controls U[(k*M + i)*kdim + j] and jump counts
/// counts[(k*M + i)*marks + m] for steps 0..N-1.
struct PathBatch {
    TimeGrid grid{};
    int n = 1;
    int kdim = 1;
    int marks = 1;
    std::size_t M = 0;
    std::vector<double> X;
    std::vector<double> U;
    std::vector<double> dW;
    std::vector<std::uint16_t> counts;
    std::vector<std::uint8_t> valid;
    std::vector<int> failure_step;  // -1 for valid paths
    std::vector<LedgerEntry> ledger;
    std::size_t projections = 0;
    std::string first_failure;

    double x(int k, std::size_t i, int j = 0) const { return X[(static_cast<std::size_t>(k) * M + i) * n + j]; }
    double u(int k, std::size_t i, int j = 0) const {
        return U[(static_cast<std::size_t>(k) * M + i) * kdim + j];
    }
    double dw(int k, std::size_t i) const { return dW[static_cast<std::size_t>(k) * M + i]; }
    int count(int k, std::size_t i, int m) const {
        return counts[(static_cast<std::size_t>(k) * M + i) * marks + m];
    }
    std::size_t invalid_count() const {
        std::size_t c = 0;
        for (auto v : valid) c += v ? 0 : 1;
        return c;
    }
    std::vector<std::size_t> valid_paths() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < M; ++i)
            if (valid[i]) out.push_back(i);
        return out;
    }
    ControlVec control(int k, std::size_t i) const {
        ControlVec v{};
        for (int j = 0; j < kdim; ++j) v[j] = u(k, i, j);
        return v;
    }
};

/// Single-path view.
struct ForwardPath {
    std::vector<double> X;  // (N+1) x n
    std::vector<double> U;  // N x kdim
    std::vector<LedgerEntry> ledger;
    bool valid = true;
    int failure_step = -1;
};

namespace detail {

struct StepKernel {
    const model::CompiledProblem& cp;
    const ControlPolicy& policy;
    double dt;

    // compensator sum_m nu_m f(t, x, u, e_m)
    void compensator(model::Point& p, double* out) const {
        const auto& jumps = cp.spec.jumps;
        for (int j = 0; j < cp.spec.n; ++j) out[j] = 0.0;
        for (std::size_t m = 0; m < jumps.mark_count(); ++m) {
            p.e() = jumps.marks[m].value;
            for (int j = 0; j < cp.spec.n; ++j) out[j] += jumps.nu(m) * cp.f[j](p);
        }
    }
};

}  // namespace detail

/// Euler scheme with compensated jumps. Jump increments use coefficients
/// frozen at (t_k, u_k) but the running pre-jump state, so stacked jumps
/// within a step compose. Invalid paths are flagged, never clipped.
inline PathBatch simulate_batch(const model::ProblemSpec& spec, const ControlPolicy& policy,
                                const std::vector<double>& x0, const NoiseBatch& noise) {
    const model::CompiledProblem cp(spec);
    const int n = spec.n, kd = spec.k, N = noise.grid().N;
    if (static_cast<int>(x0.size()) != n) throw model::ConfigError("initial state has wrong dimension");
    if (noise.marks() != static_cast<int>(spec.jumps.mark_count()))
        throw model::ConfigError("noise mark count does not match jump spec");
    const std::size_t M = noise.paths();
    PathBatch pb;
    pb.grid = noise.grid();
    pb.n = n;
    pb.kdim = kd;
    pb.marks = noise.marks();
    pb.M = M;
    pb.X.assign(static_cast<std::size_t>(N + 1) * M * n, std::numeric_limits<double>::quiet_NaN());
    pb.U.assign(static_cast<std::size_t>(N) * M * kd, std::numeric_limits<double>::quiet_NaN());
    pb.dW = noise.increments();
    pb.counts.assign(static_cast<std::size_t>(N) * M * pb.marks, 0);
    pb.valid.assign(M, 1);
    pb.failure_step.assign(M, -1);
    for (std::size_t i = 0; i < M; ++i)
        for (auto* ev = noise.jumps_begin(i); ev != noise.jumps_end(i); ++ev)
            ++pb.counts[(static_cast<std::size_t>(ev->step) * M + i) * pb.marks + ev->mark];

    const double dt = noise.grid().dt();
    detail::StepKernel kern{cp, policy, dt};
    std::atomic<std::size_t> projections{0};
    std::vector<std::vector<LedgerEntry>> ledgers(M);
    std::vector<std::string> failures(M);

    parallel_blocks(M, [&](std::size_t b, std::size_t e) {
        std::size_t local_proj = 0;
        for (std::size_t i = b; i < e; ++i) {
            double x[model::max_dim], xj[model::max_dim], drift[model::max_dim], vol[model::max_dim],
                comp[model::max_dim];
            for (int j = 0; j < n; ++j) x[j] = x0[j];
            for (int j = 0; j < n; ++j) pb.X[i * n + j] = x[j];
            const JumpEvent* ev = noise.jumps_begin(i);
            const JumpEvent* ev_end = noise.jumps_end(i);
            int k = 0;
            try {
                if (spec.state_floor && !(x[0] > *spec.state_floor))
                    throw model::DomainError("initial state at or below the state floor");
                for (k = 0; k < N; ++k) {
                    model::Point p;
                    p.s() = noise.grid().node(k);
                    for (int j = 0; j < n; ++j) p.x(j) = x[j];
                    bool moved = false;
                    const ControlVec u = policy.value(k, p, spec.controls, moved);
                    local_proj += moved ? 1 : 0;
                    for (int j = 0; j < kd; ++j) {
                        p.u(j) = u[j];
                        pb.U[(static_cast<std::size_t>(k) * M + i) * kd + j] = u[j];
                    }
                    for (int j = 0; j < n; ++j) {
                        drift[j] = cp.b[j](p);
                        vol[j] = cp.sigma[j](p);
                    }
                    kern.compensator(p, comp);
                    for (int j = 0; j < n; ++j) xj[j] = x[j];
                    for (; ev != ev_end && ev->step == k; ++ev) {
                        LedgerEntry le;
                        le.path = i;
                        le.step = k;
                        le.mark = ev->mark;
                        le.time = ev->time;
                        model::Point q = p;
                        for (int j = 0; j < n; ++j) q.x(j) = xj[j];
                        q.e() = spec.jumps.marks[static_cast<std::size_t>(ev->mark)].value;
                        for (int j = 0; j < n; ++j) {
                            le.pre[j] = xj[j];
                            le.increment[j] = cp.f[j](q);
                        }
                        for (int j = 0; j < n; ++j) xj[j] = le.pre[j] + le.increment[j];
                        ledgers[i].push_back(le);
                    }
                    const double dw = noise.dW(k, i);
                    for (int j = 0; j < n; ++j) {
                        x[j] = xj[j] + (drift[j] - comp[j]) * dt + vol[j] * dw;
                        if (!std::isfinite(x[j])) throw model::DomainError("non-finite state");
                    }
                    if (spec.state_floor && !(x[0] > *spec.state_floor))
                        throw model::DomainError("state fell to or below the floor");
                    for (int j = 0; j < n; ++j) pb.X[((static_cast<std::size_t>(k) + 1) * M + i) * n + j] = x[j];
                }
            } catch (const model::DomainError& err) {
                pb.valid[i] = 0;
                pb.failure_step[i] = k;
                failures[i] = "path " + std::to_string(i) + " step " + std::to_string(k) + ": " + err.what();
                for (int kk = k + 1; kk <= N; ++kk)
                    for (int j = 0; j < n; ++j)
                        pb.X[(static_cast<std::size_t>(kk) * M + i) * n + j] = std::numeric_limits<double>::quiet_NaN();
            }
        }
        projections += local_proj;
    });
    pb.projections = projections.load();
    for (std::size_t i = 0; i < M; ++i) {
        pb.ledger.insert(pb.ledger.end(), ledgers[i].begin(), ledgers[i].end());
        if (pb.first_failure.empty() && !failures[i].empty()) pb.first_failure = failures[i];
    }
    return pb;
}

inline PathBatch simulate_batch(const model::ProblemSpec& spec, const ControlPolicy& policy, double x0,
                                const NoiseBatch& noise) {
    return simulate_batch(spec, policy, std::vector<double>{x0}, noise);
}

/// simulate_forward on a single noise realization.
inline ForwardPath simulate_forward(const model::ProblemSpec& spec, const ControlPolicy& policy,
                                    const DrivingNoise& noise, const TimeGrid& grid, const std::vector<double>& x0) {
    const auto nb = NoiseBatch::from_path(grid, static_cast<int>(spec.jumps.mark_count()), noise);
    const PathBatch pb = simulate_batch(spec, policy, x0, nb);
    ForwardPath fp;
    fp.X = pb.X;
    fp.U = pb.U;
    fp.ledger = pb.ledger;
    fp.valid = pb.valid[0] != 0;
    fp.failure_step = pb.failure_step[0];
    return fp;
}

}  // namespace fbsdep::pathsim

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "fbsdep/model/problem.hpp"
#include "fbsdep/parallel.hpp"

namespace fbsdep::pathsim {

/// Uniform grid t_k = t0 + k*dt; the last node is exactly T.
struct TimeGrid {
    double t0 = 0.0;
    double T = 1.0;
    int N = 1;

    TimeGrid() = default;
    TimeGrid(double t0_, double T_, int N_) : t0(t0_), T(T_), N(N_) {
        if (N < 1) throw model::ConfigError("time grid needs at least one step");
        if (!(t0 < T)) throw model::ConfigError("time grid needs t0 < T");
    }
    double dt() const { return (T - t0) / N; }
    double node(int k) const { return k >= N ? T : t0 + k * dt(); }
    /// Step k with node(k) < tau <= node(k+1).
    int step_of(double tau) const {
        int k = static_cast<int>(std::ceil((tau - t0) / dt())) - 1;
        if (k < 0) k = 0;
        if (k > N - 1) k = N - 1;
        while (k > 0 && tau <= node(k)) --k;
        while (k < N - 1 && tau > node(k + 1)) ++k;
        return k;
    }
};

struct JumpEvent {
    double time = 0.0;
    int step = 0;
    int mark = 0;
};

/// Noise of one path.
struct DrivingNoise {
    std::vector<double> dW;
    std::vector<JumpEvent> jumps;
};

/// Per-path RNG stream derived from (seed, path, stream tag).
inline std::mt19937_64 path_rng(std::uint64_t seed, std::uint64_t path, std::uint32_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32), stream};
    return std::mt19937_64(seq);
}

/// Brownian increments and jump trains for a batch. Increments are stored
/// node-major (dW[k*M + i]); jumps per path in CSR form.
class NoiseBatch {
public:
    NoiseBatch() = default;

    static NoiseBatch sample(const TimeGrid& grid, const model::JumpSpec& jumps, std::size_t batch,
                             std::uint64_t seed) {
        if (batch < 1) throw model::ConfigError("noise batch must be non-empty");
        jumps.validate();
        NoiseBatch nb;
        nb.grid_ = grid;
        nb.M_ = batch;
        nb.seed_ = seed;
        nb.marks_ = static_cast<int>(jumps.mark_count());
        nb.dW_.assign(static_cast<std::size_t>(grid.N) * batch, 0.0);
        std::vector<std::vector<JumpEvent>> per_path(batch);
        std::vector<double> probs;
        for (const auto& m : jumps.marks) probs.push_back(m.probability);
        const double sd = std::sqrt(grid.dt());
        parallel_blocks(batch, [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) {
                auto w = path_rng(seed, i, 0);
                std::normal_distribution<double> normal(0.0, sd);
                for (int k = 0; k < grid.N; ++k) nb.dW_[static_cast<std::size_t>(k) * batch + i] = normal(w);
                auto r = path_rng(seed, i, 1);
                std::exponential_distribution<double> wait(jumps.intensity);
                std::discrete_distribution<int> mark(probs.begin(), probs.end());
                double tau = grid.t0;
                while (true) {
                    tau += wait(r);
                    if (tau > grid.T) break;
                    const int m = mark(r);
                    per_path[i].push_back({tau, grid.step_of(tau), m});
                }
            }
        });
        nb.offsets_.assign(batch + 1, 0);
        for (std::size_t i = 0; i < batch; ++i) nb.offsets_[i + 1] = nb.offsets_[i] + per_path[i].size();
        nb.events_.reserve(nb.offsets_.back());
        for (auto& v : per_path) nb.events_.insert(nb.events_.end(), v.begin(), v.end());
        return nb;
    }

    /// Same noise on a grid with N/factor steps: increments summed, jump times kept.
    NoiseBatch coarsen(int factor) const {
        if (factor < 1 || grid_.N % factor != 0) throw model::ConfigError("coarsening factor must divide N");
        NoiseBatch c = *this;
        c.grid_ = TimeGrid(grid_.t0, grid_.T, grid_.N / factor);
        c.dW_.assign(static_cast<std::size_t>(c.grid_.N) * M_, 0.0);
        for (int k = 0; k < grid_.N; ++k)
            for (std::size_t i = 0; i < M_; ++i)
                c.dW_[static_cast<std::size_t>(k / factor) * M_ + i] += dW_[static_cast<std::size_t>(k) * M_ + i];
        for (auto& ev : c.events_) ev.step = c.grid_.step_of(ev.time);
        return c;
    }

    const TimeGrid& grid() const { return grid_; }
    std::size_t paths() const { return M_; }
    std::uint64_t seed() const { return seed_; }
    int marks() const { return marks_; }

    double dW(int k, std::size_t i) const { return dW_[static_cast<std::size_t>(k) * M_ + i]; }
    const std::vector<double>& increments() const { return dW_; }

    const JumpEvent* jumps_begin(std::size_t i) const { return events_.data() + offsets_[i]; }
    const JumpEvent* jumps_end(std::size_t i) const { return events_.data() + offsets_[i + 1]; }
    std::size_t jump_count(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }
    std::size_t total_jumps() const { return events_.size(); }

    DrivingNoise path(std::size_t i) const {
        DrivingNoise d;
        for (int k = 0; k < grid_.N; ++k) d.dW.push_back(dW(k, i));
        d.jumps.assign(jumps_begin(i), jumps_end(i));
        return d;
    }

    /// Batch holding a single given path.
    static NoiseBatch from_path(const TimeGrid& grid, int marks, const DrivingNoise& d) {
        if (static_cast<int>(d.dW.size()) != grid.N) throw model::ConfigError("noise length does not match grid");
        NoiseBatch nb;
        nb.grid_ = grid;
        nb.M_ = 1;
        nb.marks_ = marks;
        nb.dW_ = d.dW;
        nb.events_ = d.jumps;
        for (auto& ev : nb.events_) ev.step = grid.step_of(ev.time);
        nb.offsets_ = {0, nb.events_.size()};
        return nb;
    }

private:
    TimeGrid grid_{};
    std::size_t M_ = 0;
    std::uint64_t seed_ = 0;
    int marks_ = 1;
    std::vector<double> dW_;
    std::vector<std::size_t> offsets_{0};
    std::vector<JumpEvent> events_;
};

/// sample_noise(grid, jumps, batch, seed)
inline NoiseBatch sample_noise(const TimeGrid& grid, const model::JumpSpec& jumps, std::size_t batch,
                               std::uint64_t seed) {
    return NoiseBatch::sample(grid, jumps, batch, seed);
}

}  // namespace fbsdep::pathsim

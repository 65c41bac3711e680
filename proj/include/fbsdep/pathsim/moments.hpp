#pragma once

#include <cmath>
#include <vector>

#include "fbsdep/pathsim/simulate.hpp"

namespace fbsdep::pathsim {

struct MomentRow {
    double x0 = 0.0;
    int k = 2;
    std::vector<double> horizons;
    std::vector<double> moments;  // E sup_s |X_s - x0|^k over grid nodes
    std::vector<double> stderrs;
    double slope = 0.0;
    double slope_stderr = 0.0;
    double threshold = 0.0;  // k/2 - 0.2
    bool vacuous = false;    // all moments zero
    bool pass = false;
    std::size_t excluded = 0;
};

struct MomentReport {
    std::vector<MomentRow> rows;
    bool pass() const {
        for (const auto& r : rows)
            if (!r.pass) return false;
        return true;
    }
};

struct MomentOptions {
    std::size_t batch = 20000;
    std::uint64_t seed = 1;
    int steps = 32;  // Euler steps per horizon
    double slope_slack = 0.2;
};

/// Log-log regression of E sup|X - x0|^k against the horizon T - t.
/// Each horizon uses the window [T - h, T] with its own noise stream.
inline MomentReport check_moment_estimates(const model::ProblemSpec& spec, const ControlPolicy& policy,
                                           const std::vector<double>& x0s, const std::vector<double>& horizons,
                                           const std::vector<int>& ks, const MomentOptions& opt = {}) {
    if (horizons.size() < 3) throw model::ConfigError("moment check needs at least three horizons");
    for (std::size_t i = 1; i < horizons.size(); ++i) {
        const double r0 = horizons[1] / horizons[0], ri = horizons[i] / horizons[i - 1];
        if (!(horizons[i] > horizons[i - 1]) || std::abs(ri - r0) > 1e-9 * r0)
            throw model::ConfigError("moment horizons must form an increasing geometric progression");
    }
    for (int k : ks)
        if (k != 2 && k != 4 && k != 8) throw model::ConfigError("moment order must be 2, 4 or 8");
    if (spec.n != 1) throw model::ConfigError("moment check is implemented for scalar states");

    MomentReport rep;
    for (double x0 : x0s) {
        std::vector<MomentRow> rows;
        for (int k : ks) {
            MomentRow r;
            r.x0 = x0;
            r.k = k;
            r.horizons = horizons;
            r.threshold = k / 2.0 - opt.slope_slack;
            rows.push_back(r);
        }
        for (std::size_t h = 0; h < horizons.size(); ++h) {
            const TimeGrid grid(spec.T - horizons[h], spec.T, opt.steps);
            model::ProblemSpec local = spec;
            local.t0 = grid.t0;
            const auto noise = sample_noise(grid, spec.jumps, opt.batch, opt.seed + 7919 * h);
            const PathBatch pb = simulate_batch(local, policy, x0, noise);
            for (auto& r : rows) {
                double sum = 0.0, sum2 = 0.0;
                std::size_t cnt = 0;
                for (std::size_t i = 0; i < pb.M; ++i) {
                    if (!pb.valid[i]) continue;
                    double sup = 0.0;
                    for (int kk = 0; kk <= grid.N; ++kk) sup = std::max(sup, std::abs(pb.x(kk, i) - x0));
                    const double v = std::pow(sup, r.k);
                    sum += v;
                    sum2 += v * v;
                    ++cnt;
                }
                r.excluded += pb.M - cnt;
                const double mean = cnt ? sum / cnt : 0.0;
                const double var = cnt > 1 ? std::max(0.0, (sum2 - cnt * mean * mean) / (cnt - 1)) : 0.0;
                r.moments.push_back(mean);
                r.stderrs.push_back(cnt ? std::sqrt(var / cnt) : 0.0);
            }
        }
        for (auto& r : rows) {
            bool all_zero = true;
            for (double m : r.moments) all_zero = all_zero && m == 0.0;
            if (all_zero) {
                r.vacuous = true;
                r.pass = true;
                rep.rows.push_back(r);
                continue;
            }
            // weighted least squares on (log h, log m), weights (m/se)^2
            double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
            for (std::size_t h = 0; h < r.horizons.size(); ++h) {
                const double m = r.moments[h];
                if (!(m > 0.0)) continue;
                const double rel = r.stderrs[h] > 0 ? r.stderrs[h] / m : 1e-12;
                const double w = 1.0 / (rel * rel);
                const double lx = std::log(r.horizons[h]), ly = std::log(m);
                sw += w;
                sx += w * lx;
                sy += w * ly;
                sxx += w * lx * lx;
                sxy += w * lx * ly;
            }
            const double den = sw * sxx - sx * sx;
            r.slope = den > 0 ? (sw * sxy - sx * sy) / den : 0.0;
            r.slope_stderr = den > 0 ? std::sqrt(sw / den) : 0.0;
            r.pass = r.slope >= r.threshold;
            rep.rows.push_back(r);
        }
    }
    return rep;
}

}  // namespace fbsdep::pathsim

#pragma once

#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fbsdep/model/problem.hpp"

namespace fbsdep::model {

struct AssumptionOptions {
    std::size_t samples = 10000;
    std::uint64_t seed = 1;
    double radius = 10.0;
    double x_center = 0.0;
    /// Clip sampled states from below (for coefficients defined on a half-line).
    std::optional<double> x_lower;
    /// A ratio "stabilizes" if its max on the full box is within this factor of the half box.
    double stability_factor = 1.5;
};

struct AssumptionEntry {
    std::string coefficient;
    std::string kind;  // "lipschitz" or "growth"
    std::vector<double> radii;
    std::vector<double> max_ratio;  // per radius
    bool stabilizes = true;
};

struct AssumptionReport {
    std::vector<AssumptionEntry> entries;
    bool ok() const {
        for (const auto& e : entries)
            if (!e.stabilizes) return false;
        return true;
    }
    std::vector<std::string> violations() const {
        std::vector<std::string> out;
        for (const auto& e : entries)
            if (!e.stabilizes) out.push_back(e.coefficient + ":" + e.kind);
        return out;
    }
};

/// Heuristic screen of the Lipschitz / linear-growth hypotheses: maximum
/// empirical ratios on nested sampling boxes; a ratio that keeps growing
/// with the box is flagged. Lipschitz ratios are taken in the state
/// variables (x, and y, z, ztilde for g) at fixed (s, u, e).
inline AssumptionReport validate_assumptions(const ProblemSpec& spec, const AssumptionOptions& opt = {}) {
    if (opt.samples < 100) throw ConfigError("validate_assumptions needs at least 100 samples");
    const CompiledProblem cp(spec);
    const int n = spec.n;
    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto& grid = spec.controls.grid();
    const std::vector<double> radii{opt.radius / 8, opt.radius / 4, opt.radius / 2, opt.radius};
    const std::size_t per_radius = opt.samples / radii.size();

    struct Coef {
        std::string name;
        const CompiledExpr* fn;
        bool has_yz;
    };
    std::vector<Coef> coefs;
    for (int i = 0; i < n; ++i) {
        const std::string idx = n == 1 ? "" : "[" + std::to_string(i) + "]";
        coefs.push_back({"b" + idx, &cp.b[i], false});
        coefs.push_back({"sigma" + idx, &cp.sigma[i], false});
        coefs.push_back({"f" + idx, &cp.f[i], false});
    }
    coefs.push_back({"g", &cp.g, true});
    coefs.push_back({"phi", &cp.phi, false});

    std::vector<AssumptionEntry> lip(coefs.size()), growth(coefs.size());
    for (std::size_t c = 0; c < coefs.size(); ++c) {
        lip[c] = {coefs[c].name, "lipschitz", radii, std::vector<double>(radii.size(), 0.0), true};
        growth[c] = {coefs[c].name, "growth", radii, std::vector<double>(radii.size(), 0.0), true};
    }

    auto sample_x = [&](double r) {
        double lo = opt.x_center - r, hi = opt.x_center + r;
        if (opt.x_lower && lo < *opt.x_lower) {
            lo = *opt.x_lower;
            hi = std::max(hi, lo + r);
        }
        return lo + (hi - lo) * unit(rng);
    };

    auto eval = [&](const Coef& c, const Point& p) {
        try {
            return (*c.fn)(p);
        } catch (const DomainError& err) {
            std::ostringstream os;
            os << c.name << " at (s=" << p.v[0] << ", x=" << p.v[5] << ", u=" << p.v[5 + max_dim]
               << ", y=" << p.v[1] << ", z=" << p.v[2] << ", ztilde=" << p.v[3] << "): " << err.what();
            throw DomainError(os.str());
        }
    };

    for (std::size_t ri = 0; ri < radii.size(); ++ri) {
        const double r = radii[ri];
        for (std::size_t sidx = 0; sidx < per_radius; ++sidx) {
            Point a, b;
            a.s() = spec.t0 + (spec.T - spec.t0) * unit(rng);
            const auto& u = grid[static_cast<std::size_t>(unit(rng) * grid.size()) % grid.size()];
            for (int j = 0; j < spec.k; ++j) a.u(j) = u[j];
            const auto& marks = spec.jumps.marks;
            a.e() = marks[static_cast<std::size_t>(unit(rng) * marks.size()) % marks.size()].value;
            b = a;
            double norm_a = 0.0, dist = 0.0, dist_x = 0.0, norm_x = 0.0;
            for (int i = 0; i < n; ++i) {
                a.x(i) = sample_x(r);
                b.x(i) = sample_x(r);
                dist_x += (a.x(i) - b.x(i)) * (a.x(i) - b.x(i));
                norm_x += a.x(i) * a.x(i);
            }
            for (double* slot : {&a.y(), &a.z(), &a.ztilde()}) *slot = r * (2 * unit(rng) - 1);
            for (double* slot : {&b.y(), &b.z(), &b.ztilde()}) *slot = r * (2 * unit(rng) - 1);
            dist = dist_x + (a.y() - b.y()) * (a.y() - b.y()) + (a.z() - b.z()) * (a.z() - b.z()) +
                   (a.ztilde() - b.ztilde()) * (a.ztilde() - b.ztilde());
            norm_a = std::sqrt(norm_x);
            for (std::size_t c = 0; c < coefs.size(); ++c) {
                const double d = std::sqrt(coefs[c].has_yz ? dist : dist_x);
                const double fa = eval(coefs[c], a);
                if (d > 0.0) {
                    const double fb = eval(coefs[c], b);
                    lip[c].max_ratio[ri] = std::max(lip[c].max_ratio[ri], std::abs(fa - fb) / d);
                }
                double level = fa;
                if (coefs[c].has_yz) {
                    Point a0 = a;
                    a0.y() = a0.z() = a0.ztilde() = 0.0;
                    level = eval(coefs[c], a0);
                }
                growth[c].max_ratio[ri] = std::max(growth[c].max_ratio[ri], std::abs(level) / (1.0 + norm_a));
            }
        }
    }

    AssumptionReport rep;
    for (std::size_t c = 0; c < coefs.size(); ++c) {
        for (auto* e : {&lip[c], &growth[c]}) {
            const double full = e->max_ratio.back(), half = e->max_ratio[e->max_ratio.size() - 2];
            e->stabilizes = std::isfinite(full) && full <= opt.stability_factor * half + 1e-12;
            rep.entries.push_back(*e);
        }
    }
    return rep;
}

}  // namespace fbsdep::model

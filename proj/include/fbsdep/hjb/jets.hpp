#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fbsdep/hjb/checks.hpp"

namespace fbsdep::hjb {

/// (q, p, P) for scalar state.
struct JetPoint {
    double q = 0, p = 0, P = 0;
};

enum class JetSide { super, sub };
enum class JetAxis { x, t, joint };
enum class Verdict { member, non_member, inconclusive };

inline const char* verdict_name(Verdict v) {
    switch (v) {
        case Verdict::member: return "MEMBER";
        case Verdict::non_member: return "NON-MEMBER";
        case Verdict::inconclusive: return "INCONCLUSIVE";
    }
    return "?";
}

struct ProbeOptions {
    int radii = 6;
    double r0 = 0.1;
    double shrink = 0.5;
    int samples = 64;
    double eta = -1.0;  // negative: 0.05 (1 + |P|)
    /// verdicts use the smallest `decisive` radii
    int decisive = 4;
};

/// Sampled surrogate for the limit definition: the o(.) term is replaced by
/// eta r^2 (x and joint jets) or eta r (t jets) at each radius r.
struct MembershipVerdict {
    Verdict verdict = Verdict::inconclusive;
    std::vector<double> radii;
    std::vector<double> worst;  // max normalized excess per radius
    double limit_estimate = 0;  // extrapolated to r = 0
    double eta = 0;
    std::size_t skipped = 0;  // probe points outside the domain
    std::string note;
};

/// Membership of `jet` in the right parabolic super/subjet of V at (s, x).
inline MembershipVerdict jet_membership(const ValueCandidate& V, double s, double x, const JetPoint& jet,
                                        JetSide side, JetAxis axis, const ProbeOptions& opt = {}) {
    if (opt.radii < 4 || opt.samples < 64 || opt.decisive < 2 || opt.decisive > opt.radii || !(opt.shrink > 0 && opt.shrink < 1))
        throw model::ConfigError("jet probe needs at least 4 radii and 64 samples per radius");
    MembershipVerdict out;
    out.eta = opt.eta >= 0 ? opt.eta : 0.05 * (1.0 + std::abs(jet.P));
    const double sign = side == JetSide::super ? 1.0 : -1.0;
    const double v0 = V.value(s, x);
    const int S = opt.samples;
    double r = opt.r0;
    for (int m = 0; m < opt.radii; ++m, r *= opt.shrink) {
        double worst = -std::numeric_limits<double>::infinity();
        auto probe = [&](double dt, double dx, double scale) {
            double v;
            try {
                v = V.value(s + dt, x + dx);
            } catch (const model::DomainError&) {
                ++out.skipped;
                return;
            }
            const double model_v = v0 + jet.q * dt + jet.p * dx + 0.5 * jet.P * dx * dx;
            worst = std::max(worst, sign * (v - model_v) / scale);
        };
        switch (axis) {
            case JetAxis::x:
                for (int j = 0; j < S; ++j) {
                    const int a = j - S / 2;
                    const double dx = r * (a >= 0 ? a + 1 : a) / (S / 2);
                    probe(0.0, dx, r * r);
                }
                break;
            case JetAxis::t:
                for (int j = 0; j < S; ++j) probe(r * (j + 1) / S, 0.0, r);
                break;
            case JetAxis::joint: {
                const int side_n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(S))));
                for (int a = 0; a < side_n; ++a)
                    for (int b = 0; b < side_n; ++b) {
                        const double dt = r * r * (a + 1) / side_n;
                        const double dx = r * (2.0 * b / (side_n - 1) - 1.0);
                        probe(dt, dx, r * r);
                    }
                break;
            }
        }
        out.radii.push_back(r);
        out.worst.push_back(worst);
    }
    if (out.skipped > 0) out.note = "probe points outside the domain were skipped";
    const std::size_t n = out.worst.size(), from = n - static_cast<std::size_t>(opt.decisive);
    bool ok = true, bad = true, growing = true, shrinking = true, finite = true;
    for (std::size_t m = from; m < n; ++m) {
        if (!std::isfinite(out.worst[m])) {
            finite = false;
            break;
        }
        ok = ok && out.worst[m] <= out.eta;
        bad = bad && out.worst[m] > out.eta;
        if (m > from) {
            growing = growing && out.worst[m] >= out.worst[m - 1] * (1 - 1e-6) - 1e-12;
            shrinking = shrinking && out.worst[m] <= out.worst[m - 1] * (1 + 1e-6) + 1e-12;
        }
    }
    // a monotone decay that ends below eta counts as the limit being <= 0
    const bool member = finite && (ok || (shrinking && out.worst.back() <= out.eta));
    // first-order Richardson estimate of the r -> 0 limit, for an O(r) decay
    const double w1 = out.worst[n - 1], w0 = out.worst[n - 2];
    out.limit_estimate = (w1 - opt.shrink * w0) / (1.0 - opt.shrink);
    const bool excluded = finite && bad && (growing || out.limit_estimate > out.eta);
    out.verdict = member ? Verdict::member : (excluded ? Verdict::non_member : Verdict::inconclusive);
    return out;
}

struct JetCounts {
    std::size_t member = 0, non_member = 0, inconclusive = 0;
    void add(Verdict v) {
        (v == Verdict::member ? member : v == Verdict::non_member ? non_member : inconclusive)++;
    }
    /// members over decided pairs; 1 when nothing was decided
    double pass_rate() const {
        const std::size_t d = member + non_member;
        return d == 0 ? 1.0 : static_cast<double>(member) / static_cast<double>(d);
    }
};

struct JetReport {
    std::size_t pairs = 0;
    JetCounts x_super;      // (-p, -P) in the second-order superjet in x
    JetCounts t_super;      // trajectory Hamiltonian in the right time superjet
    JetCounts joint_super;  // (calH, -p, -P) in the joint superjet
    JetCounts x_sub;        // (-p, -P) probed as a subjet element
    double max_form_diff = 0;  // agreement of the three trajectory-Hamiltonian forms
    bool subjet_vacuous = true;  // no subjet element found
};

struct JetOptions {
    std::size_t pairs = 50;
    ProbeOptions probe{};
    /// optional filter on (node, path); the subsample is drawn from the kept pairs
    std::function<bool(int, std::size_t)> include;
};

/// Inclusions of the adjoint-built jets in the jets of V on a deterministic
/// subsample of (node, path) pairs.
inline JetReport check_jet_inclusions(const ScalarProblem& pr, const adjoint::Trajectory& tr,
                                      const adjoint::AdjointField& first, const adjoint::AdjointField& second,
                                      const ValueCandidate& V, const JetOptions& opt = {}) {
    JetReport r;
    for (const auto& [k, i] : sample_pairs(tr.pb(), opt.pairs, opt.include)) {
        const auto ctx = trajectory_context(pr, tr, first, second, k, i);
        const auto calH = eval_calH(pr, ctx, V, tr.pb().control(k, i));
        r.max_form_diff = std::max(r.max_form_diff, calH.max_rel_diff);
        const JetPoint jx{0.0, -ctx.p, -ctx.P};
        const JetPoint jt{calH.value, 0.0, 0.0};
        const JetPoint jj{calH.value, -ctx.p, -ctx.P};
        r.x_super.add(jet_membership(V, ctx.s, ctx.x, jx, JetSide::super, JetAxis::x, opt.probe).verdict);
        r.t_super.add(jet_membership(V, ctx.s, ctx.x, jt, JetSide::super, JetAxis::t, opt.probe).verdict);
        r.joint_super.add(jet_membership(V, ctx.s, ctx.x, jj, JetSide::super, JetAxis::joint, opt.probe).verdict);
        const auto sub = jet_membership(V, ctx.s, ctx.x, jx, JetSide::sub, JetAxis::x, opt.probe).verdict;
        r.x_sub.add(sub);
        if (sub == Verdict::member) r.subjet_vacuous = false;
        ++r.pairs;
    }
    return r;
}

}  // namespace fbsdep::hjb

#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "fbsdep/fixtures/fixture.hpp"
#include "fbsdep/hjb/jets.hpp"

using namespace fbsdep;
using namespace fbsdep::hjb;
using model::parse_expr;
using Catch::Approx;

namespace {

ControlVec cv(double u) {
    ControlVec v{};
    v[0] = u;
    return v;
}

model::ProblemSpec zero_problem() {
    model::ProblemSpec p;
    p.name = "zero";
    p.controls = model::ControlSet::intervals({{-1, 1}}, 21);
    return p;
}

pathsim::PathBatch run_policy(const model::ProblemSpec& spec, const pathsim::ControlPolicy& pol, double x0, int N,
                              std::size_t M, std::uint64_t seed) {
    const pathsim::TimeGrid grid(spec.t0, spec.T, N);
    const auto noise = pathsim::sample_noise(grid, spec.jumps, M, seed);
    return pathsim::simulate_batch(spec, pol, x0, noise);
}

}  // namespace

TEST_CASE("generator G on simple problems", "[hjb]") {
    {
        const ScalarProblem pr(zero_problem());
        const ValueCandidate V(parse_expr("0"));
        for (double x : {-1.0, 0.0, 2.5})
            for (double u : {-1.0, 0.3}) CHECK(eval_G(pr, V, 0.2, x, cv(u)) == 0.0);
    }
    {
        // V = -x^2/2 turns G into u^2/2 - u for every x
        const auto fx = fixtures::fixture_5_1();
        const ScalarProblem pr(fx.spec);
        for (double x : {-2.0, 0.0, 1.3})
            for (double u : {-3.0, -2.2, 1.0, 2.0})
                CHECK(eval_G(pr, fx.value, 0.4, x, cv(u)) == Approx(0.5 * u * u - u).margin(1e-12));
    }
    {
        const auto fx = fixtures::fixture_5_2();
        const ScalarProblem pr(fx.spec);
        // the control-dependent part vanishes at u = 1/x
        CHECK(eval_G(pr, fx.value, 0.0, 2.0, cv(0.5)) == Approx(0.0).margin(1e-12));
        CHECK(eval_G(pr, fx.value, 0.0, 2.0, cv(0.7)) < 0.0);
    }
}

TEST_CASE("HJB residual of the log-state value", "[hjb]") {
    const auto fx = fixtures::fixture_5_2();
    const ScalarProblem pr(fx.spec);
    std::vector<double> ts, xs;
    for (int i = 0; i < 50; ++i) {
        ts.push_back(fx.spec.t0 + (fx.spec.T - fx.spec.t0) * i / 49.0);
        xs.push_back(0.5 + 4.5 * i / 49.0);
    }
    const auto field = hjb_residual(pr, fx.value, ts, xs);
    REQUIRE(field.errors == 0);
    REQUIRE(field.points.size() == 2500);
    const double step = fx.spec.controls.grid()[1][0] - fx.spec.controls.grid()[0][0];
    for (const auto& p : field.points) {
        CHECK(std::abs(p.residual) <= 1e-8 + p.gap_bound);
        CHECK(std::abs(p.argmax[0] - 1.0 / p.x) <= step);
    }
    CHECK(field.max_terminal_mismatch() == 0.0);
}

TEST_CASE("log-state value rejects a nonpositive start", "[hjb]") {
    CHECK_THROWS_AS(fixtures::fixture_5_2(-1.0), model::DomainError);
    CHECK_THROWS_AS(fixtures::fixture_5_2(0.0), model::DomainError);
}

TEST_CASE("HJB residual of the kinked value", "[hjb]") {
    const auto fx = fixtures::fixture_5_3();
    const ScalarProblem pr(fx.spec);
    const auto field = hjb_residual(pr, fx.value, {0.0, 0.3, 0.7, 1.0}, {-3.0, -1.0, -0.1, 0.1, 1.0, 3.0});
    CHECK(field.errors == 0);
    CHECK(field.max_abs_residual() <= 1e-12);
    CHECK(field.max_terminal_mismatch() == 0.0);
    for (const auto& p : field.points) CHECK_FALSE(p.one_sided);
}

TEST_CASE("HJB residual of the affine-quadratic candidate is 7.5", "[hjb]") {
    const auto fx = fixtures::fixture_5_1();
    const ScalarProblem pr(fx.spec);
    const auto field = hjb_residual(pr, fx.value, {0.0, 0.5}, {-1.0, 0.0, 2.0});
    for (const auto& p : field.points) {
        CHECK(p.residual == Approx(7.5).margin(1e-12));
        CHECK(p.argmax[0] == -3.0);
    }
    bool ledgered = false;
    for (const auto& e : fx.ledger) ledgered = ledgered || e.claim_id == "hjb-solution";
    CHECK(ledgered);
}

TEST_CASE("grid maximum keeps its argmax under a control-free shift", "[hjb]") {
    auto spec = fixtures::affine_quadratic_problem();
    const ScalarProblem pr(spec);
    spec.g = spec.g + parse_expr("3*x^2 - 2 + s");
    const ScalarProblem shifted(spec);
    const ValueCandidate V(parse_expr("-0.3*x^2 + 0.1*x"));
    for (double x : {-1.0, 0.4, 2.0}) {
        const auto d = V.derivatives(0.2, x);
        const auto a = maximize_G(pr, V, d, 0.2, x), b = maximize_G(shifted, V, d, 0.2, x);
        CHECK(a.argmax[0] == b.argmax[0]);
        CHECK(b.value - a.value == Approx(3 * x * x - 2 + 0.2).margin(1e-12));
    }
}

TEST_CASE("Hamiltonian H on hand-computed points", "[hjb]") {
    {
        const ScalarProblem pr(zero_problem());
        auto c = HamiltonianContext::zeros(1);
        c.p = 2.0;
        c.q = -1.0;
        c.P = 3.0;
        CHECK(eval_H(pr, c, cv(0.7)) == 0.0);
    }
    {
        auto spec = zero_problem();
        spec.b = {parse_expr("u")};
        const ScalarProblem pr(spec);
        auto c = HamiltonianContext::zeros(1);
        c.p = 1.0;
        for (double u : {-1.0, 0.25, 1.0}) CHECK(eval_H(pr, c, cv(u)) == Approx(u).margin(1e-15));
    }
    {
        // p b + q sigma + P sigma^2/2 + g(x, y, z + p sigma, 0): 2 + 2 + 2 + (0 - 2 - 2) = 2
        const ScalarProblem pr(fixtures::affine_quadratic_problem());
        auto c = HamiltonianContext::zeros(1);
        c.s = 0.0;
        c.x = 0.0;
        c.p = c.q = c.P = 1.0;
        CHECK(eval_H(pr, c, cv(2.0)) == Approx(2.0).margin(1e-14));
    }
}

TEST_CASE("H* reduces to H when h is 1", "[hjb]") {
    const ScalarProblem pr(fixtures::geometric_kink_problem());
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> U(-2.0, 2.0);
    for (int j = 0; j < 50; ++j) {
        auto c = HamiltonianContext::zeros(1);
        c.s = 0.5;
        c.x = U(rng);
        c.y = U(rng);
        c.z = U(rng);
        c.zt[0] = U(rng);
        c.p = U(rng);
        c.q = U(rng);
        c.P = U(rng);
        c.sigma_bar = U(rng);
        c.gz_bar = U(rng);
        c.h = 1.0;
        c.pstar = c.p;
        c.Pstar = c.P;
        c.qstar = c.q + c.gz_bar * c.p;
        const double u = U(rng);
        CHECK(eval_Hstar(pr, c, cv(u)) == Approx(eval_H(pr, c, cv(u))).margin(1e-12));
    }
}

TEST_CASE("H* equals h H with closed-form dual adjoints", "[hjb]") {
    // with p* = h p, q* = h q + h g_z p and P* = h P the two Hamiltonians scale
    const ScalarProblem pr(fixtures::affine_quadratic_problem());
    for (double h : {0.3, 1.7, 4.0})
        for (double u : {-3.0, 1.5}) {
            auto c = HamiltonianContext::zeros(1);
            c.x = 0.9;
            c.p = 0.9;
            c.q = 1.0;
            c.P = 1.0;
            c.gz_bar = -1.0;
            c.h = h;
            c.pstar = h * c.p;
            c.qstar = h * c.q + h * c.gz_bar * c.p;
            c.Pstar = h * c.P;
            CHECK(std::abs(eval_Hstar(pr, c, cv(u)) - h * eval_H(pr, c, cv(u))) <= 1e-9);
        }
}

TEST_CASE("trajectory Hamiltonian forms agree along the trajectory control", "[hjb]") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> U(-1.5, 1.5);
    for (const auto& fx : {fixtures::fixture_5_1(), fixtures::fixture_5_3()}) {
        const ScalarProblem pr(fx.spec);
        const auto& grid = fx.spec.controls.grid();
        for (int j = 0; j < 100; ++j) {
            auto c = HamiltonianContext::zeros(1);
            c.s = 0.01 * j;
            c.x = U(rng);
            const auto ubar = grid[static_cast<std::size_t>(j * 7) % grid.size()];
            c.p = U(rng);
            c.q = U(rng);
            c.P = U(rng);
            c.qt[0] = U(rng);
            c.Qt[0] = U(rng);
            c.sigma_bar = pr.sigma(c.s, c.x, ubar);
            c.f_bar[0] = pr.f(c.s, c.x, ubar, 0);
            const auto H = eval_calH(pr, c, fx.value, ubar);
            CHECK(H.max_rel_diff <= 1e-9);
        }
    }
}

TEST_CASE("trajectory Hamiltonian bounds V_t on the kinked example", "[hjb]") {
    const auto fx = fixtures::fixture_5_3();
    const ScalarProblem pr(fx.spec);
    for (double s : {0.0, 0.4, 0.9})
        for (double x : {-2.0, -0.5}) {
            auto c = HamiltonianContext::zeros(1);
            c.s = s;
            c.x = x;
            c.p = std::exp(s - 1.0);
            const auto ubar = cv(-1.0);
            c.sigma_bar = pr.sigma(s, x, ubar);
            c.f_bar[0] = pr.f(s, x, ubar, 0);
            const auto H = eval_calH(pr, c, fx.value, ubar);
            const double Vt = fx.value.derivatives(s, x).v_t;
            CHECK(H.value >= Vt - 1e-12);
            CHECK(H.value == Approx(Vt).margin(1e-12));
        }
}

TEST_CASE("jet probe on quadratics", "[hjb][jets]") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(-2.0, 2.0), D(0.1, 0.5);
    int checked = 0;
    while (checked < 100) {
        const double a = U(rng), b = U(rng), c = U(rng);
        const ValueCandidate V(parse_expr(fixtures::detail::num(a) + " + " + fixtures::detail::num(b) + "*x + " +
                                          fixtures::detail::num(0.5 * c) + "*x^2"));
        const double x = U(rng);
        const double vx = b + c * x, vxx = c;
        const bool exact_p = rng() % 2 == 0;
        const double p = exact_p ? vx : vx + (rng() % 2 ? 1 : -1) * D(rng);
        const double P = U(rng);
        const double eta = 0.05 * (1.0 + std::abs(P));
        if (std::abs(P - (vxx - 2 * eta)) < 0.05) continue;
        const bool member = exact_p && P >= vxx - 2 * eta;
        const auto v = jet_membership(V, 0.0, x, {0.0, p, P}, JetSide::super, JetAxis::x);
        CHECK(v.verdict == (member ? Verdict::member : Verdict::non_member));
        ++checked;
    }
}

TEST_CASE("jets of the kinked value at x = 0", "[hjb][jets]") {
    const auto fx = fixtures::fixture_5_3();
    for (double s : {0.0, 0.5, 0.9}) {
        const double lo = -std::exp(1.0 - s), hi = -std::exp(s - 1.0);
        for (double p : {lo, 0.5 * (lo + hi), hi})
            for (double P : {0.0, 1.0, 5.0}) {
                CHECK(jet_membership(fx.value, s, 0.0, {0, p, P}, JetSide::super, JetAxis::x).verdict ==
                      Verdict::member);
                CHECK(jet_membership(fx.value, s, 0.0, {0, p, P}, JetSide::sub, JetAxis::x).verdict ==
                      Verdict::non_member);
            }
        for (double p : {lo - 0.05, hi + 0.05})
            CHECK(jet_membership(fx.value, s, 0.0, {0, p, 0.0}, JetSide::super, JetAxis::x).verdict ==
                  Verdict::non_member);
        CHECK(jet_membership(fx.value, s, 0.0, {0, hi, -1.0}, JetSide::super, JetAxis::x).verdict ==
              Verdict::non_member);
    }
}

TEST_CASE("Taylor jets on the smooth branches", "[hjb][jets]") {
    const auto fx = fixtures::fixture_5_3();
    for (double x : {-1.0, 0.7})
        for (double s : {0.1, 0.6}) {
            const auto d = fx.value.derivatives(s, x);
            const JetPoint jx{0.0, d.v_x, d.v_xx};
            CHECK(jet_membership(fx.value, s, x, jx, JetSide::super, JetAxis::x).verdict == Verdict::member);
            CHECK(jet_membership(fx.value, s, x, jx, JetSide::sub, JetAxis::x).verdict == Verdict::member);
            const JetPoint jt{d.v_t, 0.0, 0.0};
            CHECK(jet_membership(fx.value, s, x, jt, JetSide::super, JetAxis::t).verdict == Verdict::member);
            CHECK(jet_membership(fx.value, s, x, jt, JetSide::sub, JetAxis::t).verdict == Verdict::member);
            const JetPoint jj{d.v_t, d.v_x, d.v_xx};
            CHECK(jet_membership(fx.value, s, x, jj, JetSide::super, JetAxis::joint).verdict == Verdict::member);
            // a larger time slope stays above V; a smaller one does not
            const JetPoint above{d.v_t + 0.5, d.v_x, d.v_xx};
            CHECK(jet_membership(fx.value, s, x, above, JetSide::super, JetAxis::t).verdict == Verdict::member);
            const JetPoint off{d.v_t - 0.5, d.v_x, d.v_xx};
            CHECK(jet_membership(fx.value, s, x, off, JetSide::super, JetAxis::t).verdict == Verdict::non_member);
        }
}

TEST_CASE("jet probe rejects thin sampling", "[hjb][jets]") {
    const ValueCandidate V(parse_expr("x^2"));
    ProbeOptions o;
    o.radii = 3;
    CHECK_THROWS_AS(jet_membership(V, 0, 0, {}, JetSide::super, JetAxis::x, o), model::ConfigError);
    o = {};
    o.samples = 32;
    CHECK_THROWS_AS(jet_membership(V, 0, 0, {}, JetSide::super, JetAxis::x, o), model::ConfigError);
}

TEST_CASE("adjoint jets lie in the superjets along the kinked trajectory", "[hjb][jets]") {
    const auto fx = fixtures::fixture_5_3(-1.0);
    const auto pb = run_policy(fx.spec, pathsim::ControlPolicy::constant({-1.0}), fx.x0, 32, 2000, 7);
    const auto tr = adjoint::make_trajectory(fx.spec, pb);
    const adjoint::CoefficientSet cs(fx.spec);
    const auto first = adjoint::solve_first_order(cs, tr);
    const auto second = adjoint::solve_second_order(cs, tr, first);
    REQUIRE(first.method == "exponential");
    const ScalarProblem pr(fx.spec);
    const auto r = check_jet_inclusions(pr, tr, first, second, fx.value);
    CHECK(r.pairs == 50);
    CHECK(r.x_super.pass_rate() >= 0.9);
    CHECK(r.t_super.pass_rate() >= 0.9);
    CHECK(r.joint_super.pass_rate() >= 0.9);
    CHECK(r.max_form_diff <= 1e-9);
}

TEST_CASE("maximum condition reports on the kinked and affine examples", "[hjb]") {
    {
        const auto fx = fixtures::fixture_5_3(-1.0);
        const auto pb = run_policy(fx.spec, pathsim::ControlPolicy::constant({-1.0}), fx.x0, 32, 2000, 3);
        const auto tr = adjoint::make_trajectory(fx.spec, pb);
        const adjoint::CoefficientSet cs(fx.spec);
        const auto first = adjoint::solve_first_order(cs, tr);
        const auto second = adjoint::solve_second_order(cs, tr, first);
        const auto r = check_maximum_condition(ScalarProblem(fx.spec), tr, first, second);
        CHECK(r.samples == 2000);
        CHECK(std::isfinite(r.q_low));
        CHECK(std::isfinite(r.q_low_reversed));
        CHECK(r.rms_H > 0);
    }
    {
        const auto fx = fixtures::fixture_5_1();
        const auto pb = run_policy(fx.spec, fx.optimal_policy(), fx.x0, 16, 4000, 3);
        const auto tr = adjoint::make_trajectory(fx.spec, pb);
        const adjoint::CoefficientSet cs(fx.spec);
        const auto first = adjoint::solve_first_order(cs, tr);
        const auto second = adjoint::solve_second_order(cs, tr, first);
        const auto r = check_maximum_condition(ScalarProblem(fx.spec), tr, first, second);
        CHECK(r.samples > 0);
        CHECK(std::isfinite(r.q_low));
        CHECK(r.rms_H > 0);
    }
}

TEST_CASE("the kinked example's trajectory control maximizes H", "[hjb]") {
    // exact adjoints p = exp(s - T), q = P = 0 and Z = sigma_bar Y_x = -p x
    const auto fx = fixtures::fixture_5_3();
    const ScalarProblem pr(fx.spec);
    for (double s : {0.0, 0.5, 0.9})
        for (double x : {-2.0, -0.3}) {
            auto c = HamiltonianContext::zeros(1);
            c.s = s;
            c.x = x;
            c.p = std::exp(s - 1.0);
            c.z = -c.p * x;
            c.sigma_bar = pr.sigma(s, x, cv(-1.0));
            const double Hbar = eval_H(pr, c, cv(-1.0));
            double lo = 0;
            for (const auto& u : fx.spec.controls.grid()) {
                CHECK(eval_H(pr, c, u) - Hbar <= 1e-12);
                lo = std::min(lo, eval_H(pr, c, u) - Hbar);
            }
            // strictly below somewhere, so the minimizing orientation fails
            CHECK(lo < -0.1 * std::abs(c.p * x));
        }
}

TEST_CASE("smooth relations on the affine-quadratic trajectory", "[hjb]") {
    const auto fx = fixtures::fixture_5_1();
    const auto pb = run_policy(fx.spec, fx.optimal_policy(), fx.x0, 64, 100000, 1);
    const auto tr = adjoint::make_trajectory(fx.spec, pb);
    const adjoint::CoefficientSet cs(fx.spec);
    const auto first = adjoint::solve_first_order(cs, tr);
    const auto second = adjoint::solve_second_order(cs, tr, first);
    const auto r = check_smooth_relations(ScalarProblem(fx.spec), tr, first, second, fx.value);
    CHECK(r.p_residual <= 0.05);
    CHECK(r.q_residual <= 0.05);
    CHECK(r.qt_residual <= 0.05);
    CHECK(r.gap_max_abs <= 1e-10);
    CHECK(r.excluded == 0);
    CHECK_FALSE(r.inconclusive);
}

TEST_CASE("strict second-order gap on the log-state trajectory", "[hjb]") {
    const auto fx = fixtures::fixture_5_2();
    const auto pb = run_policy(fx.spec, fx.optimal_policy(), fx.x0, 64, 100000, 1);
    bsde::BasisSpec basis;
    basis.degree = 2;
    basis.extra = {parse_expr("x^(-1)"), parse_expr("x^(-2)")};
    const auto tr = adjoint::make_trajectory(fx.spec, pb, basis);
    const adjoint::CoefficientSet cs(fx.spec);
    adjoint::AdjointOptions ao;
    ao.basis = basis;
    const auto first = adjoint::solve_first_order(cs, tr, ao);
    const auto second = adjoint::solve_second_order(cs, tr, first, ao);
    const auto r = check_smooth_relations(ScalarProblem(fx.spec), tr, first, second, fx.value);
    CHECK(r.gap_positive_fraction >= 0.95);
    CHECK(r.flipped_positive_fraction >= 0.95);
    CHECK(r.samples > 0);
}

TEST_CASE("constant value with zero adjoints", "[hjb]") {
    const auto spec = zero_problem();
    const auto pb = run_policy(spec, pathsim::ControlPolicy::constant({0.0}), 0.5, 8, 500, 2);
    const auto tr = adjoint::make_trajectory(spec, pb);
    const adjoint::CoefficientSet cs(spec);
    const auto first = adjoint::solve_first_order(cs, tr);
    const auto second = adjoint::solve_second_order(cs, tr, first);
    const auto r = check_smooth_relations(ScalarProblem(spec), tr, first, second, ValueCandidate(parse_expr("0")));
    CHECK(r.p_residual == 0.0);
    CHECK(r.q_residual == 0.0);
    CHECK(r.qt_residual == 0.0);
    CHECK(r.gap_max_abs == 0.0);
    CHECK(r.stationarity_residual == 0.0);
}

#include <catch_amalgamated.hpp>

#include <cmath>
#include <memory>
#include <sstream>

#include "fbsdep/adjoint/relations.hpp"
#include "fbsdep/fixtures/problems.hpp"

using namespace fbsdep;
using namespace fbsdep::adjoint;
using model::parse_expr;
using Catch::Approx;

namespace {

pathsim::PathBatch batch_for(const model::ProblemSpec& spec, double u, double x0, int N, std::size_t M,
                             std::uint64_t seed) {
    const pathsim::TimeGrid grid(spec.t0, spec.T, N);
    const auto noise = pathsim::sample_noise(grid, spec.jumps, M, seed);
    return pathsim::simulate_batch(spec, pathsim::ControlPolicy::constant({u}), x0, noise);
}

NodeCoeffs coeffs_at(const CoefficientSet& cs, std::vector<MarkCoeffs>& buf, double s, double x, double u, double y,
                     double z, double zt) {
    model::Point p;
    p.s() = s;
    p.x(0) = x;
    p.u(0) = u;
    p.y() = y;
    p.z() = z;
    p.ztilde() = zt;
    buf.resize(cs.marks());
    return cs.evaluate(p, buf.data());
}

// The full affine-quadratic run at 1e5 paths is shared by several cases.
struct AffineRun {
    model::ProblemSpec spec = fixtures::affine_quadratic_problem();
    pathsim::PathBatch pb = batch_for(spec, 1.0, 1.0, 64, 100000, 1);
    Trajectory tr = make_trajectory(spec, pb);
    CoefficientSet cs{spec};
    AdjointField first = solve_first_order(cs, tr);
    AdjointField second = solve_second_order(cs, tr, first);
    DualSystem dual = solve_dual(cs, tr);
};

const AffineRun& affine_run() {
    static const auto run = std::make_unique<AffineRun>();
    return *run;
}

double node_rmse(const bsde::BackwardFields& f, int k, double (*truth)(double), const pathsim::PathBatch& pb,
                 int which) {
    double se = 0;
    for (std::size_t i = 0; i < pb.M; ++i) {
        const double v = which == 0 ? f.y(k, i) : which == 1 ? f.z(k, i) : f.zt(k, i, 0);
        se += std::pow(v - truth(pb.x(k, i)), 2);
    }
    return std::sqrt(se / static_cast<double>(pb.M));
}

}  // namespace

TEST_CASE("first-order drift of the fixtures", "[adjoint]") {
    std::vector<MarkCoeffs> buf;
    const double qt = 0.7;
    {
        const CoefficientSet cs(fixtures::affine_quadratic_problem());
        for (double u : {-3.0, -2.5, 1.0, 2.0}) {
            const auto c = coeffs_at(cs, buf, 0.3, 1.4, u, 0.2, 0.5, -0.1);
            CHECK(first_order_drift(c, 2.3, -0.4, &qt) == Approx(u + 0.4 - qt).margin(1e-14));
            CHECK(first_order_drift(c, -5.0, -0.4, &qt) == Approx(u + 0.4 - qt).margin(1e-14));
        }
    }
    {
        const CoefficientSet cs(fixtures::geometric_kink_problem());
        for (double u : {-1.0, -0.5, 0.0, 1.0, 1.5, 2.0}) {
            const auto c = coeffs_at(cs, buf, 0.1, -0.8, u, 0.3, 0.1, 0.2);
            const double p = 1.3, q = 0.4;
            CHECK(first_order_drift(c, p, q, &qt) == Approx((1 + u - u * u) * p - qt).margin(1e-13));
        }
    }
    {
        model::ProblemSpec z;
        z.b = {parse_expr("0")};
        z.sigma = {parse_expr("0")};
        z.f = {parse_expr("0")};
        z.g = parse_expr("0");
        z.phi = parse_expr("0");
        z.controls = model::ControlSet::intervals({{0.0, 0.0}}, 1);
        z.jumps.intensity = 1.0;
        z.jumps.marks = {{1.0, 1.0}};
        const CoefficientSet cs(z);
        const auto c = coeffs_at(cs, buf, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0);
        CHECK(first_order_drift(c, 3.0, 2.0, &qt) == 0.0);
    }
}

TEST_CASE("second-order drift of the fixtures", "[adjoint]") {
    std::vector<MarkCoeffs> buf;
    const double qt = 0.3, Qt = -0.6;
    {
        const CoefficientSet cs(fixtures::affine_quadratic_problem());
        const auto c = coeffs_at(cs, buf, 0.5, 0.9, 1.0, 0.0, 0.9, 1.4);
        CHECK(second_order_drift(c, 0.9, 1.0, &qt, 1.7, 0.25, &Qt) == Approx(-0.25 - Qt).margin(1e-13));
    }
    {
        const CoefficientSet cs(fixtures::geometric_kink_problem());
        for (double u : {-1.0, 0.0, 1.0, 2.0}) {
            const auto c = coeffs_at(cs, buf, 0.5, -1.2, u, 0.0, 0.0, 0.0);
            const double P = 0.8, Q = -0.2;
            CHECK(second_order_drift(c, 0.4, 0.0, &qt, P, Q, &Qt) ==
                  Approx((2 + 2 * u - u * u) * P + u * Q - Qt).margin(1e-13));
        }
    }
}

TEST_CASE("affine-quadratic fixture: first- and second-order adjoints", "[adjoint][slow]") {
    const auto& r = affine_run();
    double wp = 0, wq = 0, wqt = 0;
    for (int k = 0; k < 64; ++k) {
        wp = std::max(wp, node_rmse(r.first.fields, k, [](double x) { return x; }, r.pb, 0));
        wq = std::max(wq, node_rmse(r.first.fields, k, [](double) { return 1.0; }, r.pb, 1));
        wqt = std::max(wqt, node_rmse(r.first.fields, k, [](double) { return 1.0; }, r.pb, 2));
    }
    CHECK(wp <= 0.05);
    CHECK(wq <= 0.05);
    CHECK(wqt <= 0.05);

    CHECK(r.second.method == "exponential");
    for (int k = 0; k <= 64; ++k)
        for (std::size_t i : {0ul, 17ul, 99999ul}) {
            CHECK(r.second.fields.y(k, i) == Approx(1.0).margin(1e-12));
            if (k < 64) {
                CHECK(r.second.fields.z(k, i) == 0.0);
                CHECK(r.second.fields.zt(k, i, 0) == 0.0);
            }
        }
}

TEST_CASE("affine-quadratic fixture: h is a mean-one martingale killed by jumps", "[adjoint][slow]") {
    const auto& r = affine_run();
    const auto& pb = r.pb;
    for (int k = 0; k <= 64; ++k) {
        double s = 0, s2 = 0;
        for (std::size_t i = 0; i < pb.M; ++i) {
            const double h = r.dual.h_at(k, i);
            s += h;
            s2 += h * h;
        }
        const double n = static_cast<double>(pb.M), mean = s / n;
        const double se = std::sqrt(std::max(0.0, s2 / n - mean * mean) / n);
        CHECK(std::abs(mean - 1.0) <= 4 * se + 1e-12);
    }
    std::size_t jumps = 0;
    for (std::size_t i = 0; i < pb.M; ++i) {
        CHECK(r.dual.h_at(0, i) == 1.0);
        int first_jump = -1;
        for (int k = 0; k < 64; ++k) {
            jumps += static_cast<std::size_t>(pb.count(k, i, 0));
            if (first_jump < 0 && pb.count(k, i, 0) > 0) first_jump = k;
        }
        if (first_jump >= 0 && i < 2000) CHECK(r.dual.h_at(first_jump + 1, i) == 0.0);
    }
    CHECK(r.dual.nonpositive_jump_factors == jumps);
}

TEST_CASE("affine-quadratic fixture: dual relations within 0.1", "[adjoint][slow]") {
    const auto& r = affine_run();
    const auto rep = check_relations(r.cs, r.tr, r.first, r.second, r.dual);
    REQUIRE(rep.entries.size() == 7);
    for (const auto& e : rep.entries) {
        INFO(e.name << " pooled " << e.pooled);
        CHECK(e.pooled <= 0.1);
    }
    CHECK(rep.pass());
    REQUIRE(rep.notes.size() == 1);
}

TEST_CASE("terminal conditions are exact", "[adjoint]") {
    const auto spec = fixtures::affine_quadratic_problem();
    const auto pb = batch_for(spec, 1.0, 1.0, 8, 4000, 3);
    const auto tr = make_trajectory(spec, pb);
    const CoefficientSet cs(spec);
    const auto f1 = solve_first_order(cs, tr);
    const auto f2 = solve_second_order(cs, tr, f1);
    const auto d = solve_dual(cs, tr);
    for (std::size_t i = 0; i < pb.M; ++i) {
        const double x = pb.x(8, i);
        CHECK(f1.fields.y(8, i) == cs.phi_x(x));
        CHECK(f2.fields.y(8, i) == cs.phi_xx(x));
        CHECK(d.first.fields.y(8, i) == d.h_at(8, i) * cs.phi_x(x));
        CHECK(d.second.fields.y(8, i) == d.h_at(8, i) * cs.phi_xx(x));
    }
}

TEST_CASE("geometric fixture: exponential adjoints", "[adjoint]") {
    const auto spec = fixtures::geometric_kink_problem();
    const CoefficientSet cs(spec);
    SECTION("u = -1 from a negative start") {
        const auto pb = batch_for(spec, -1.0, -1.0, 32, 2000, 5);
        const auto tr = make_trajectory(spec, pb);
        const auto f1 = solve_first_order(cs, tr);
        const auto f2 = solve_second_order(cs, tr, f1);
        CHECK(f1.method == "exponential");
        for (int k = 0; k <= 32; ++k) {
            const double s = pb.grid.node(k);
            CHECK(f1.fields.y(k, 3) == Approx(std::exp(s - 1.0)).epsilon(0).margin(1e-10));
            CHECK(f2.fields.y(k, 3) == 0.0);
            if (k < 32) {
                CHECK(f1.fields.z(k, 3) == 0.0);
                CHECK(f1.fields.zt(k, 3, 0) == 0.0);
            }
        }
    }
    SECTION("u in {0, 1} from a positive start") {
        for (double u : {0.0, 1.0}) {
            const auto pb = batch_for(spec, u, 1.0, 32, 2000, 5);
            const auto tr = make_trajectory(spec, pb);
            const auto f1 = solve_first_order(cs, tr);
            for (int k = 0; k <= 32; ++k)
                CHECK(f1.fields.y(k, 0) == Approx(std::exp(1.0 - pb.grid.node(k))).epsilon(0).margin(1e-10));
        }
    }
}

TEST_CASE("geometric fixture: relations within 0.1", "[adjoint]") {
    const auto spec = fixtures::geometric_kink_problem();
    const CoefficientSet cs(spec);
    const auto pb = batch_for(spec, -1.0, -1.0, 64, 20000, 9);
    const auto tr = make_trajectory(spec, pb);
    const auto f1 = solve_first_order(cs, tr);
    const auto f2 = solve_second_order(cs, tr, f1);
    // p* = h p with p deterministic: affine in h is enough, and H* = h H
    // amplifies the noise of a cubic basis
    AdjointOptions opt;
    opt.basis.degree = 1;
    const auto d = solve_dual(cs, tr, opt);
    const auto rep = check_relations(cs, tr, f1, f2, d);
    for (const auto& e : rep.entries) {
        INFO(e.name << " pooled " << e.pooled);
        CHECK(e.pooled <= 0.1);
    }
}

TEST_CASE("h is identically one when g ignores (y, z, ztilde)", "[adjoint]") {
    auto spec = fixtures::affine_quadratic_problem();
    spec.g = parse_expr("u*x - u");
    const CoefficientSet cs(spec);
    const auto pb = batch_for(spec, 1.0, 1.0, 16, 20000, 4);
    const auto tr = make_trajectory(spec, pb);
    const auto f1 = solve_first_order(cs, tr);
    const auto f2 = solve_second_order(cs, tr, f1);
    const auto d = solve_dual(cs, tr);
    for (double h : d.h) CHECK(h == 1.0);
    CHECK(d.nonpositive_jump_factors == 0);
    const auto rep = check_relations(cs, tr, f1, f2, d, 0.05);
    for (const auto& e : rep.entries) {
        INFO(e.name << " pooled " << e.pooled);
        CHECK(e.pooled <= 0.05);
    }
}

TEST_CASE("first-order adjoint is linear in the terminal data", "[adjoint]") {
    auto spec = fixtures::geometric_kink_problem();
    const auto pb = batch_for(spec, 1.0, 1.0, 16, 5000, 8);
    AdjointOptions opt;
    opt.allow_exact = false;
    const auto tr = make_trajectory(spec, pb);
    const auto base = solve_first_order(CoefficientSet(spec), tr, opt);
    spec.phi = parse_expr("3*x");
    const auto scaled = solve_first_order(CoefficientSet(spec), tr, opt);
    CHECK(base.method == "regression");
    for (int k = 0; k < 16; ++k)
        for (std::size_t i : {0ul, 100ul, 4999ul}) {
            CHECK(scaled.fields.y(k, i) == Approx(3 * base.fields.y(k, i)).epsilon(1e-9).margin(1e-10));
            CHECK(scaled.fields.z(k, i) == Approx(3 * base.fields.z(k, i)).epsilon(1e-9).margin(1e-10));
            CHECK(scaled.fields.zt(k, i, 0) == Approx(3 * base.fields.zt(k, i, 0)).epsilon(1e-9).margin(1e-10));
        }
}

TEST_CASE("adjoint systems reject vector state and export CSV", "[adjoint]") {
    model::ProblemSpec two;
    two.n = 2;
    two.b = {parse_expr("0"), parse_expr("0")};
    two.sigma = {parse_expr("1"), parse_expr("1")};
    two.f = {parse_expr("0"), parse_expr("0")};
    two.g = parse_expr("0");
    two.phi = parse_expr("0");
    two.controls = model::ControlSet::intervals({{0.0, 0.0}}, 1);
    CHECK_THROWS_AS(CoefficientSet(two), model::ConfigError);

    const auto spec = fixtures::geometric_kink_problem();
    const CoefficientSet cs(spec);
    const auto pb = batch_for(spec, -1.0, -1.0, 2, 200, 1);
    const auto tr = make_trajectory(spec, pb);
    const auto f1 = solve_first_order(cs, tr);
    std::ostringstream os;
    write_adjoint_csv(os, f1, "first");
    std::string header;
    std::getline(std::istringstream(os.str()), header);
    CHECK(header == "path,step,p,q,qtilde_1");
    CHECK_THROWS_AS(write_adjoint_csv(os, f1, "third"), model::ConfigError);
}

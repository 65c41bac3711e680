#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "fbsdep/bsde/solver.hpp"
#include "fbsdep/fixtures/problems.hpp"

using namespace fbsdep;
using namespace fbsdep::bsde;
using model::parse_expr;
using Catch::Approx;

namespace {

model::ProblemSpec brownian_problem(const char* phi, const char* g = "0") {
    model::ProblemSpec p;
    p.name = "brownian";
    p.b = {parse_expr("0")};
    p.sigma = {parse_expr("1")};
    p.f = {parse_expr("0")};
    p.g = parse_expr(g);
    p.phi = parse_expr(phi);
    p.controls = model::ControlSet::intervals({{0.0, 0.0}}, 1);
    return p;
}

pathsim::PathBatch batch_for(const model::ProblemSpec& spec, const pathsim::ControlPolicy& pol, double x0, int N,
                             std::size_t M, std::uint64_t seed) {
    const pathsim::TimeGrid grid(spec.t0, spec.T, N);
    const auto noise = pathsim::sample_noise(grid, spec.jumps, M, seed);
    return pathsim::simulate_batch(spec, pol, x0, noise);
}

double node_mean(const BackwardFields& f, int k) {
    double s = 0;
    std::size_t c = 0;
    for (std::size_t i = 0; i < f.M; ++i)
        if (!std::isnan(f.y(k, i))) s += f.y(k, i), ++c;
    return s / c;
}

}  // namespace

TEST_CASE("martingale terminal value is reproduced node-wise", "[bsde]") {
    const auto spec = brownian_problem("x");
    const auto pb = batch_for(spec, pathsim::ControlPolicy::constant({0.0}), 0.0, 64, 100000, 11);
    const auto sol = solve_backward(spec, pb);
    double worst = 0;
    for (int k = 0; k <= 64; ++k) {
        double se = 0;
        for (std::size_t i = 0; i < pb.M; ++i) se += std::pow(sol.fields.y(k, i) - pb.x(k, i, 0), 2);
        worst = std::max(worst, std::sqrt(se / pb.M));
    }
    CHECK(worst <= 0.05);
    for (int k = 0; k < 64; ++k) {
        CHECK(sol.fields.z(k, 7) == Approx(1.0).margin(0.05));
        CHECK(sol.fields.zt(k, 7, 0) == Approx(0.0).margin(0.05));
    }
}

TEST_CASE("zero data gives the zero solution", "[bsde]") {
    const auto spec = brownian_problem("0");
    const auto pb = batch_for(spec, pathsim::ControlPolicy::constant({0.0}), 1.0, 8, 2000, 3);
    const auto sol = solve_backward(spec, pb);
    for (double v : sol.fields.Y) CHECK(v == 0.0);
    for (double v : sol.fields.Z) CHECK(v == 0.0);
    for (double v : sol.fields.Zt) CHECK(v == 0.0);
    CHECK(cost_functional(sol).J == 0.0);
}

TEST_CASE("terminal values are exact", "[bsde][property]") {
    const auto spec = fixtures::affine_quadratic_problem();
    const auto pb = batch_for(spec, pathsim::ControlPolicy::constant({1.0}), 1.0, 16, 5000, 5);
    const auto sol = solve_backward(spec, pb);
    const model::CompiledExpr phi(spec.phi);
    for (std::size_t i = 0; i < pb.M; ++i) {
        model::Point p;
        p.x(0) = pb.x(16, i, 0);
        const double expect = phi(p);
        CHECK(std::memcmp(&expect, &sol.fields.Y[16 * pb.M + i], sizeof(double)) == 0);
    }
}

TEST_CASE("zero driver keeps the batch mean constant", "[bsde][property]") {
    const auto spec = fixtures::geometric_kink_problem();
    auto zero_driver = spec;
    zero_driver.g = parse_expr("0");
    const auto pb = batch_for(zero_driver, pathsim::ControlPolicy::constant({-1.0}), -1.0, 32, 50000, 9);
    const auto sol = solve_backward(zero_driver, pb);
    const double mT = node_mean(sol.fields, 32);
    for (int k = 0; k < 32; ++k) CHECK(std::abs(node_mean(sol.fields, k) - mT) <= 4 * sol.y0_stderr);
}

TEST_CASE("cost functional of the martingale problem", "[bsde]") {
    const auto spec = brownian_problem("x");
    const auto pb = batch_for(spec, pathsim::ControlPolicy::constant({0.0}), 2.0, 16, 20000, 21);
    const auto J = cost_functional(solve_backward(spec, pb));
    CHECK(J.stderr > 0);
    CHECK(std::abs(J.J + 2.0) <= 2 * J.stderr);
}

TEST_CASE("affine fixture value converges under grid refinement", "[bsde][property]") {
    // under u = 1 the state is x + W + N and Y = X^2/2 - (T - s)/2
    const auto spec = fixtures::affine_quadratic_problem();
    const double x0 = 1.0, exact = 0.5 * x0 * x0 - 0.5;
    const pathsim::TimeGrid fine(0.0, 1.0, 32);
    const auto noise = pathsim::sample_noise(fine, spec.jumps, 100000, 17);
    std::vector<double> err;
    for (int f : {8, 4, 2, 1}) {
        const auto coarse = f == 1 ? noise : noise.coarsen(f);
        const auto pb = pathsim::simulate_batch(spec, pathsim::ControlPolicy::constant({1.0}), x0, coarse);
        const auto Y0 = -cost_functional(solve_backward(spec, pb)).J;
        err.push_back(std::abs(Y0 - exact));
    }
    const double order = std::log2(err.front() / err.back()) / 3.0;
    INFO("errors " << err[0] << ' ' << err[1] << ' ' << err[2] << ' ' << err[3]);
    CHECK(err.back() < err.front());
    CHECK(order >= 0.4);
}

TEST_CASE("raising the terminal value raises Y", "[bsde][property]") {
    const auto spec = fixtures::affine_quadratic_problem();
    auto shifted = spec;
    shifted.phi = parse_expr("0.5*x^2 + 0.1");
    const auto pb = batch_for(spec, pathsim::ControlPolicy::constant({1.0}), 0.5, 16, 20000, 23);
    const auto a = solve_backward(spec, pb), b = solve_backward(shifted, pb);
    const double ya = node_mean(a.fields, 0), yb = node_mean(b.fields, 0);
    CHECK(yb - ya > -2 * std::hypot(a.y0_stderr, b.y0_stderr));
    CHECK(yb > ya);
}

TEST_CASE("stability estimate", "[bsde][property]") {
    const auto spec = fixtures::affine_quadratic_problem();
    const auto pol = pathsim::ControlPolicy::constant({1.0});
    StabilityOptions opt;
    opt.batch = 100000;
    opt.steps = 16;
    SECTION("identical data") {
        const auto r = check_stability_estimate(spec, pol, {1.0}, parse_expr("0"), parse_expr("0"), parse_expr("0"),
                                                parse_expr("0"), opt);
        CHECK(r.lhs == 0.0);
        CHECK(r.rhs == 0.0);
        CHECK(r.pass);
    }
    SECTION("terminal shift") {
        const auto r = check_stability_estimate(spec, pol, {1.0}, parse_expr("0"), parse_expr("0.1"), parse_expr("0"),
                                                parse_expr("0"), opt);
        CHECK(r.lipschitz == Approx(std::sqrt(2.0)).epsilon(1e-12));
        CHECK(r.rhs == Approx(std::exp(r.beta) * 0.01).epsilon(1e-10));
        CHECK(r.lhs <= r.rhs * 1.05);
        CHECK(r.pass);
    }
    SECTION("driver shift") {
        const auto r = check_stability_estimate(spec, pol, {1.0}, parse_expr("0"), parse_expr("0"), parse_expr("0"),
                                                parse_expr("0.1"), opt);
        // left Riemann sum of the weight on the grid
        double expect = 0;
        for (int k = 0; k < 16; ++k) expect += std::exp(r.beta * k / 16.0) * 0.01 / 16.0;
        CHECK(r.rhs == Approx(expect).epsilon(1e-10));
        CHECK(r.pass);
    }
}

TEST_CASE("value estimate over constant candidates", "[bsde]") {
    const auto spec = fixtures::geometric_kink_problem();
    std::vector<pathsim::ControlPolicy> cands;
    for (double u : {-1.0, -0.5, 0.0, 1.0, 1.5, 2.0}) cands.push_back(pathsim::ControlPolicy::constant({u}));
    ValueOptions opt;
    opt.batch = 40000;
    opt.steps = 32;
    const auto v = estimate_value(spec, {-1.0}, cands, opt);
    REQUIRE(v.argmin >= 0);
    CHECK((v.argmin == 0 || v.argmin == 5));
    CHECK(v.table.size() == 6);
    // u = 2 is heavy tailed, so its estimate only agrees within its own stderr
    CHECK(std::abs(v.value - std::exp(-1.0)) <= 2 * v.stderr + 0.03);
    CHECK(v.table[0].J == Approx(std::exp(-1.0)).margin(0.03));

    SECTION("single zero-cost candidate") {
        auto zero = spec;
        zero.g = parse_expr("0");
        zero.phi = parse_expr("0");
        const auto z = estimate_value(zero, {-1.0}, {pathsim::ControlPolicy::constant({0.0})}, opt);
        CHECK(z.value == 0.0);
        CHECK(z.argmin == 0);
    }
}

TEST_CASE("solver is deterministic and rejects degenerate bases", "[bsde]") {
    const auto spec = fixtures::affine_quadratic_problem();
    const auto pb = batch_for(spec, pathsim::ControlPolicy::constant({2.0}), 1.0, 8, 4000, 31);
    const auto a = solve_backward(spec, pb), b = solve_backward(spec, pb);
    CHECK(std::memcmp(a.fields.Y.data(), b.fields.Y.data(), a.fields.Y.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(a.fields.Zt.data(), b.fields.Zt.data(), a.fields.Zt.size() * sizeof(double)) == 0);

    BasisSpec dup;
    dup.extra = {parse_expr("2*x + 1")};
    CHECK_THROWS_AS(solve_backward(spec, pb, dup), RegressionError);
    BasisSpec huge;
    huge.degree = 500;
    CHECK_THROWS_AS(solve_backward(spec, pb, huge), model::ConfigError);
}

TEST_CASE("solution csv export", "[bsde][export]") {
    const auto spec = brownian_problem("x");
    const auto pb = batch_for(spec, pathsim::ControlPolicy::constant({0.0}), 0.0, 2, 200, 1);
    const auto sol = solve_backward(spec, pb);
    std::ostringstream os;
    write_solution_csv(os, sol);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    CHECK(line == "path,step,Y,Z,Ztilde_1");
    int n = 0;
    while (std::getline(is, line)) ++n;
    CHECK(n == 200 * 3);
}

TEST_CASE("jump block drops columns that only repeat the state block", "[regression]") {
    // a weight that every jump resets to zero: w * Nc = -nu dt * w on all rows
    const Eigen::Index R = 4000;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    std::bernoulli_distribution jump(0.05);
    const double nudt = 0.05;
    Eigen::MatrixXd psi(R, 3);
    Eigen::VectorXd dW(R), y(R);
    Eigen::MatrixXd comp(R, 1);
    int jumps = 0;
    for (Eigen::Index r = 0; r < R; ++r) {
        const double x = nd(rng);
        const bool j = jump(rng);
        jumps += j;
        const double w = j ? 0.0 : std::exp(0.3 * x);
        psi(r, 0) = 1.0;
        psi(r, 1) = x;
        psi(r, 2) = w;
        dW(r) = 0.1 * nd(rng);
        comp(r, 0) = (j ? 1.0 : 0.0) - nudt;
        y(r) = 1.0 + x + 2.0 * comp(r, 0);
    }
    const NodeRegression reg(psi, dW, comp, {jumps}, 0);
    CHECK(reg.condition() < 1e6);
    CHECK(reg.mark_columns() == std::vector<int>{2});
    const auto fit = reg.fit(y);
    CHECK(fit.residual_rms < 1e-10);
    CHECK(fit.marks[0](0) == Approx(2.0).margin(1e-9));
}

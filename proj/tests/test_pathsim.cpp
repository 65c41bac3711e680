#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <sstream>

#include "fbsdep/fixtures/problems.hpp"
#include "fbsdep/pathsim/export.hpp"
#include "fbsdep/pathsim/moments.hpp"
#include "fbsdep/pathsim/simulate.hpp"

using namespace fbsdep;
using namespace fbsdep::pathsim;
using Catch::Approx;

namespace {

struct Stats {
    double mean = 0, var = 0, se = 0;
};

template <class F>
Stats stats(std::size_t M, F&& value) {
    double s = 0, s2 = 0;
    for (std::size_t i = 0; i < M; ++i) {
        const double v = value(i);
        s += v;
        s2 += v * v;
    }
    Stats st;
    st.mean = s / M;
    st.var = (s2 - M * st.mean * st.mean) / (M - 1);
    st.se = std::sqrt(st.var / M);
    return st;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("time grid nodes", "[pathsim][grid]") {
    const TimeGrid g(0.1, 0.7, 7);
    CHECK(g.node(0) == 0.1);
    CHECK(g.node(7) == 0.7);
    for (int k = 0; k < 7; ++k) CHECK(g.node(k) < g.node(k + 1));
    CHECK(g.step_of(0.1 + 1e-12) == 0);
    CHECK(g.step_of(g.node(3)) == 2);
    CHECK(g.step_of(0.7) == 6);
    CHECK_THROWS_AS(TimeGrid(0, 1, 0), model::ConfigError);
}

TEST_CASE("noise statistics and determinism", "[pathsim][noise]") {
    const TimeGrid g(0, 1, 16);
    model::JumpSpec j;
    const auto nb = sample_noise(g, j, 100000, 42);
    const double mean_jumps = static_cast<double>(nb.total_jumps()) / nb.paths();
    CHECK(mean_jumps >= 0.99);
    CHECK(mean_jumps <= 1.01);
    for (int k = 0; k < g.N; ++k) {
        const auto st = stats(nb.paths(), [&](std::size_t i) { return nb.dW(k, i); });
        const double ratio = (st.var + st.mean * st.mean) / g.dt();
        CHECK(ratio >= 0.97);
        CHECK(ratio <= 1.03);
    }
    // counts in a window (0.25, 0.75]
    std::size_t window = 0;
    for (std::size_t i = 0; i < nb.paths(); ++i) {
        double last = -1;
        for (auto* e = nb.jumps_begin(i); e != nb.jumps_end(i); ++e) {
            REQUIRE(e->time > last);
            REQUIRE(e->time <= 1.0);
            REQUIRE(g.node(e->step) < e->time);
            REQUIRE(e->time <= g.node(e->step + 1));
            last = e->time;
            window += (e->time > 0.25 && e->time <= 0.75) ? 1 : 0;
        }
    }
    CHECK(static_cast<double>(window) / nb.paths() == Approx(0.5).margin(0.01));

    const auto again = sample_noise(g, j, 100000, 42);
    CHECK(bitwise_equal(nb.increments(), again.increments()));
    CHECK(again.total_jumps() == nb.total_jumps());
    const auto other = sample_noise(g, j, 1000, 43);
    CHECK(other.dW(0, 0) != nb.dW(0, 0));
}

TEST_CASE("noise does not depend on the worker count", "[pathsim][noise][concurrency]") {
    const TimeGrid g(0, 1, 8);
    model::JumpSpec j;
    ::setenv("FBSDEP_THREADS", "1", 1);
    const auto a = sample_noise(g, j, 10000, 5);
    ::setenv("FBSDEP_THREADS", "3", 1);
    const auto b = sample_noise(g, j, 10000, 5);
    ::unsetenv("FBSDEP_THREADS");
    CHECK(bitwise_equal(a.increments(), b.increments()));
    REQUIRE(a.total_jumps() == b.total_jumps());
    const auto spec = fixtures::affine_quadratic_problem();
    ::setenv("FBSDEP_THREADS", "4", 1);
    const auto pa = simulate_batch(spec, ControlPolicy::constant({1.0}), 0.3, a);
    ::unsetenv("FBSDEP_THREADS");
    const auto pb = simulate_batch(spec, ControlPolicy::constant({1.0}), 0.3, a);
    CHECK(bitwise_equal(pa.X, pb.X));
}

TEST_CASE("coarsened noise sums increments", "[pathsim][noise]") {
    const TimeGrid g(0, 1, 8);
    const auto fine = sample_noise(g, model::JumpSpec{}, 50, 9);
    const auto coarse = fine.coarsen(4);
    CHECK(coarse.grid().N == 2);
    CHECK(coarse.dW(1, 7) == Approx(fine.dW(4, 7) + fine.dW(5, 7) + fine.dW(6, 7) + fine.dW(7, 7)));
    CHECK(coarse.total_jumps() == fine.total_jumps());
    CHECK_THROWS_AS(fine.coarsen(3), model::ConfigError);
}

TEST_CASE("zero coefficients leave the state fixed", "[pathsim][simulate]") {
    const TimeGrid g(0, 1, 10);
    const auto nb = sample_noise(g, model::JumpSpec{}, 100, 1);
    const auto pb = simulate_batch(model::ProblemSpec{}, ControlPolicy::constant({0.0}), 2.5, nb);
    for (double x : pb.X) CHECK(x == 2.5);
}

TEST_CASE("affine fixture moments under u = 1", "[pathsim][simulate]") {
    const auto spec = fixtures::affine_quadratic_problem();
    const TimeGrid g(0, 1, 32);
    const auto nb = sample_noise(g, spec.jumps, 100000, 11);
    const double x0 = 0.4;
    const auto pb = simulate_batch(spec, ControlPolicy::constant({1.0}), x0, nb);
    CHECK(pb.invalid_count() == 0);
    const auto st = stats(pb.M, [&](std::size_t i) { return pb.x(g.N, i) - x0; });
    // X_T - x = T + W_T + compensated Poisson
    CHECK(std::abs(st.mean - 1.0) <= 3 * st.se);
    CHECK(st.var == Approx(2.0).epsilon(0.03));
}

TEST_CASE("compensation identity", "[pathsim][simulate][property]") {
    model::ProblemSpec spec;
    spec.f = {model::lit(0.7)};
    spec.jumps.intensity = 2.0;
    const TimeGrid g(0, 1, 16);
    for (std::size_t M : {1000u, 10000u, 100000u}) {
        const auto nb = sample_noise(g, spec.jumps, M, 3 + M);
        const auto pb = simulate_batch(spec, ControlPolicy::constant({0.0}), 1.0, nb);
        const auto st = stats(pb.M, [&](std::size_t i) { return pb.x(g.N, i) - 1.0; });
        CHECK(std::abs(st.mean) <= 4 * st.se);
    }
}

TEST_CASE("jump ledger replays the terminal state bitwise", "[pathsim][simulate][property]") {
    const auto spec = fixtures::geometric_kink_problem();
    const model::CompiledProblem cp(spec);
    const TimeGrid g(0, 1, 20);
    auto j = spec.jumps;
    j.intensity = 3.0;
    auto spec3 = spec;
    spec3.jumps = j;
    const auto nb = sample_noise(g, j, 2000, 77);
    const auto pb = simulate_batch(spec3, ControlPolicy::constant({2.0}), -0.8, nb);
    REQUIRE(!pb.ledger.empty());
    std::size_t cursor = 0;
    int stacked = 0;
    for (std::size_t i = 0; i < pb.M; ++i) {
        double x = -0.8;
        for (int k = 0; k < g.N; ++k) {
            model::Point p;
            p.s() = g.node(k);
            p.x() = x;
            p.u() = 2.0;
            const double drift = cp.b[0](p), vol = cp.sigma[0](p);
            p.e() = 1.0;
            const double comp = j.nu(0) * cp.f[0](p);
            double xj = x;
            int in_step = 0;
            while (cursor < pb.ledger.size() && pb.ledger[cursor].path == i && pb.ledger[cursor].step == k) {
                const auto& le = pb.ledger[cursor];
                REQUIRE(le.pre[0] == xj);
                model::Point q = p;
                q.x() = le.pre[0];
                REQUIRE(le.increment[0] == cp.f[0](q));
                xj = le.pre[0] + le.increment[0];
                ++cursor;
                ++in_step;
            }
            stacked += in_step > 1 ? 1 : 0;
            x = xj + (drift - comp) * g.dt() + vol * pb.dw(k, i);
            REQUIRE(std::memcmp(&x, &pb.X[(static_cast<std::size_t>(k) + 1) * pb.M + i], sizeof x) == 0);
        }
    }
    CHECK(cursor == pb.ledger.size());
    CHECK(stacked > 0);
}

TEST_CASE("seed determinism of simulated batches", "[pathsim][simulate][property]") {
    const auto spec = fixtures::geometric_kink_problem();
    const TimeGrid g(0, 1, 16);
    const auto a = simulate_batch(spec, ControlPolicy::constant({-1.0}), -1.0, sample_noise(g, spec.jumps, 5000, 8));
    const auto b = simulate_batch(spec, ControlPolicy::constant({-1.0}), -1.0, sample_noise(g, spec.jumps, 5000, 8));
    CHECK(bitwise_equal(a.X, b.X));
    CHECK(bitwise_equal(a.U, b.U));
    CHECK(a.counts == b.counts);
}

TEST_CASE("strong convergence under grid refinement", "[pathsim][simulate][property]") {
    const auto spec = fixtures::geometric_kink_problem();
    const TimeGrid finest(0, 1, 256);
    const auto noise = sample_noise(finest, spec.jumps, 20000, 123);
    const auto policy = ControlPolicy::constant({-0.5});
    const double x0 = 1.0;
    auto terminal = [&](int factor) {
        const auto pb = simulate_batch(spec, policy, x0, noise.coarsen(factor));
        std::vector<double> xt(pb.M);
        for (std::size_t i = 0; i < pb.M; ++i) xt[i] = pb.x(pb.grid.N, i);
        return xt;
    };
    // step sizes 1/16 and 1/32 against references four times finer
    auto strong_error = [&](int factor) {
        const auto coarse = terminal(factor), ref = terminal(factor / 4);
        double s = 0;
        for (std::size_t i = 0; i < coarse.size(); ++i) s += std::abs(coarse[i] - ref[i]);
        return s / coarse.size();
    };
    const double e1 = strong_error(16), e2 = strong_error(8);
    const double order = std::log2(e1 / e2);
    INFO("errors " << e1 << " " << e2 << " order " << order);
    CHECK(e2 < e1);
    CHECK(order >= 0.4);
}

TEST_CASE("feedback projection and invalid-path accounting", "[pathsim][simulate]") {
    const auto spec = fixtures::log_state_problem();
    const TimeGrid g(0, 1, 32);
    const auto nb = sample_noise(g, spec.jumps, 4000, 5);
    const auto feedback = ControlPolicy::feedback({model::parse_expr("1/x")});
    const auto pb = simulate_batch(spec, feedback, 0.05, nb);
    CHECK(pb.projections > 0);  // 1/x exceeds the upper control bound near 0
    for (std::size_t i = 0; i < pb.M; ++i) {
        for (int k = 0; k < g.N; ++k)
            if (pb.valid[i] || k < pb.failure_step[i]) REQUIRE(spec.controls.contains({pb.u(k, i)}));
        if (pb.valid[i]) {
            for (int k = 0; k <= g.N; ++k) REQUIRE(pb.x(k, i) > 1e-4);
        } else {
            REQUIRE(pb.failure_step[i] >= 0);
            REQUIRE(std::isnan(pb.x(g.N, i)));
        }
    }
    CHECK(pb.invalid_count() > 0);
    CHECK(!pb.first_failure.empty());

    const auto safe = simulate_batch(spec, feedback, 2.5, nb);
    CHECK(safe.invalid_count() <= safe.M / 100);
    CHECK_THROWS_AS(ControlPolicy::feedback({model::parse_expr("y")}), model::ConfigError);
}

TEST_CASE("single path simulation matches the batch kernel", "[pathsim][simulate]") {
    const auto spec = fixtures::affine_quadratic_problem();
    const TimeGrid g(0, 1, 8);
    const auto nb = sample_noise(g, spec.jumps, 10, 4);
    const auto pb = simulate_batch(spec, ControlPolicy::constant({-2.5}), 1.0, nb);
    const auto fp = simulate_forward(spec, ControlPolicy::constant({-2.5}), nb.path(3), g, {1.0});
    REQUIRE(fp.valid);
    for (int k = 0; k <= g.N; ++k) CHECK(fp.X[k] == pb.x(k, 3));
}

TEST_CASE("moment estimates", "[pathsim][moments]") {
    MomentOptions opt;
    opt.batch = 20000;
    opt.seed = 17;
    const std::vector<double> horizons{0.125, 0.25, 0.5};

    const auto r51 = check_moment_estimates(fixtures::affine_quadratic_problem(), ControlPolicy::constant({1.0}),
                                            {0.0}, horizons, {2}, opt);
    REQUIRE(r51.rows.size() == 1);
    INFO("slope " << r51.rows[0].slope);
    CHECK(r51.rows[0].slope == Approx(1.0).margin(0.2));
    CHECK(r51.pass());

    const auto r53 = check_moment_estimates(fixtures::geometric_kink_problem(), ControlPolicy::constant({-1.0}),
                                            {-1.0}, horizons, {2}, opt);
    CHECK(r53.rows[0].slope >= 0.8);
    CHECK(r53.pass());

    const auto zero = check_moment_estimates(model::ProblemSpec{}, ControlPolicy::constant({0.0}), {1.0}, horizons,
                                             {2, 4}, opt);
    CHECK(zero.pass());
    CHECK(zero.rows[0].vacuous);

    // Fourth moments on short horizons: the diffusion-only model has slope
    // near 2; with Poisson jumps E|X - x|^4 is of order (T - t), so the k/2
    // rate fails.
    const std::vector<double> short_h{1.0 / 64, 1.0 / 32, 1.0 / 16};
    model::ProblemSpec diffusion;
    diffusion.sigma = {model::lit(1.0)};
    const auto d4 = check_moment_estimates(diffusion, ControlPolicy::constant({0.0}), {0.0}, short_h, {4}, opt);
    CHECK(d4.rows[0].slope == Approx(2.0).margin(0.2));
    CHECK(d4.pass());
    const auto j4 = check_moment_estimates(fixtures::affine_quadratic_problem(), ControlPolicy::constant({1.0}),
                                           {0.0}, short_h, {4}, opt);
    INFO("jump k=4 slope " << j4.rows[0].slope);
    CHECK(j4.rows[0].slope < 1.8);
    CHECK(!j4.pass());

    CHECK_THROWS_AS(check_moment_estimates(diffusion, ControlPolicy::constant({0.0}), {0.0}, {0.1, 0.2}, {2}, opt),
                    model::ConfigError);
    CHECK_THROWS_AS(check_moment_estimates(diffusion, ControlPolicy::constant({0.0}), {0.0}, horizons, {3}, opt),
                    model::ConfigError);
}

TEST_CASE("csv and binary export", "[pathsim][export]") {
    const auto spec = fixtures::affine_quadratic_problem();
    const TimeGrid g(0, 1, 4);
    const auto pb = simulate_batch(spec, ControlPolicy::constant({1.0}), 0.0, sample_noise(g, spec.jumps, 3, 2));
    std::ostringstream csv;
    write_csv(csv, pb);
    const std::string text = csv.str();
    CHECK(text.rfind("path,step,time,x1,u1,jump,valid\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 3 * 5);

    std::stringstream bin;
    write_binary(bin, pb);
    const auto back = read_binary(bin);
    CHECK(bitwise_equal(back.X, pb.X));
    CHECK(bitwise_equal(back.U, pb.U));
    CHECK(bitwise_equal(back.dW, pb.dW));
    CHECK(back.counts == pb.counts);
    CHECK(back.grid.N == 4);
    std::stringstream junk("nonsense");
    CHECK_THROWS(read_binary(junk));
}

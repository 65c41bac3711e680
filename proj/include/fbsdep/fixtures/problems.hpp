#pragma once

#include <string>

#include "fbsdep/model/parse.hpp"
#include "fbsdep/model/problem.hpp"

namespace fbsdep::fixtures {

struct Horizon {
    double t0 = 0.0;
    double T = 1.0;
};

/// b = sigma = f = u, g = u x - u - z - ztilde, phi = x^2/2,
/// U = [-3,-2] u [1,2], unit-intensity Poisson jumps with mark 1.
inline model::ProblemSpec affine_quadratic_problem(Horizon h = {}) {
    using model::parse_expr;
    model::ProblemSpec p;
    p.name = "example-5.1";
    p.b = {parse_expr("u")};
    p.sigma = {parse_expr("u")};
    p.f = {parse_expr("u")};
    p.g = parse_expr("u*x - u - z - ztilde");
    p.phi = parse_expr("0.5*x^2");
    p.controls = model::ControlSet::intervals({{-3, -2}, {1, 2}}, 101);
    p.jumps.intensity = 1.0;
    p.jumps.marks = {{1.0, 1.0}};
    p.t0 = h.t0;
    p.T = h.T;
    return p;
}

/// b = sigma = f = u, g = ln x + u/x + u/x^3 - x^-4/2 - y - z - ztilde,
/// phi = ln x. The nonnegative half-line of controls is truncated to
/// [0, 10] so that the search grid is finite.
inline model::ProblemSpec log_state_problem(Horizon h = {}, double u_max = 10.0, int grid_points = 1001) {
    using model::parse_expr;
    model::ProblemSpec p;
    p.name = "example-5.2";
    p.b = {parse_expr("u")};
    p.sigma = {parse_expr("u")};
    p.f = {parse_expr("u")};
    p.g = parse_expr("ln(x) + u/x + u/x^3 - 0.5*x^(-4) - y - z - ztilde");
    p.phi = parse_expr("ln(x)");
    p.controls = model::ControlSet::intervals({{0.0, u_max}}, grid_points);
    p.jumps.intensity = 1.0;
    p.jumps.marks = {{1.0, 1.0}};
    p.t0 = h.t0;
    p.T = h.T;
    p.state_floor = 1e-4;
    return p;
}

/// b = x + 2xu, sigma = f = xu, g = -z u - ztilde, phi = x,
/// U = [-1,0] u [1,2].
inline model::ProblemSpec geometric_kink_problem(Horizon h = {}) {
    using model::parse_expr;
    model::ProblemSpec p;
    p.name = "example-5.3";
    p.b = {parse_expr("x + 2*x*u")};
    p.sigma = {parse_expr("x*u")};
    p.f = {parse_expr("x*u")};
    p.g = parse_expr("-z*u - ztilde");
    p.phi = parse_expr("x");
    p.controls = model::ControlSet::intervals({{-1, 0}, {1, 2}}, 101);
    p.jumps.intensity = 1.0;
    p.jumps.marks = {{1.0, 1.0}};
    p.t0 = h.t0;
    p.T = h.T;
    return p;
}

}  // namespace fbsdep::fixtures

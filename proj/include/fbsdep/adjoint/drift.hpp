#pragma once

#include <array>

#include "fbsdep/adjoint/coefficients.hpp"

namespace fbsdep::adjoint {

/// [1, p, sigma_x p + q, int (f_x p + qt + f_x qt) nu]
inline std::array<double, 4> psi_row(const NodeCoeffs& c, double p, double q, const double* qt) {
    double jump = 0.0;
    for (int m = 0; m < c.nmarks; ++m) {
        const auto& mk = c.marks[m];
        jump += mk.nu * (mk.fx * p + qt[m] + mk.fx * qt[m]);
    }
    return {1.0, p, c.sx * p + q, jump};
}

inline double quadratic_form(const std::array<double, 4>& v, const std::array<std::array<double, 4>, 4>& A) {
    double acc = 0.0;
    for (std::size_t a = 0; a < 4; ++a)
        for (std::size_t b = 0; b < 4; ++b) acc += v[a] * A[a][b] * v[b];
    return acc;
}

/// Generator of the first-order adjoint (-dp = F ds - q dW - int qt dN~).
inline double first_order_drift(const NodeCoeffs& c, double p, double q, const double* qt) {
    double in_gzt = 0.0, direct = 0.0;
    for (int m = 0; m < c.nmarks; ++m) {
        const auto& mk = c.marks[m];
        in_gzt += mk.nu * (mk.fx * p + qt[m] + mk.fx * qt[m]);
        direct += mk.nu * mk.fx * qt[m];
    }
    return c.bx * p + c.sx * q + c.gx + c.gy * p + c.gz * (c.sx * p + q) + c.gzt * in_gzt + direct;
}

/// Generator of the second-order adjoint. The cross term f_x P f_x uses the
/// trajectory value for both factors.
inline double second_order_drift(const NodeCoeffs& c, double p, double q, const double* qt, double P, double Q,
                                 const double* Qt) {
    const auto psi = psi_row(c, p, q, qt);
    double out = 2 * c.bx * P + c.bxx * p + 2 * c.sx * Q + c.sxx * q + c.sx * P * c.sx + c.gy * P +
                 2 * c.gz * c.sx * P + c.sxx * c.gz * p + c.gz * Q + quadratic_form(psi, c.D2g);
    for (int m = 0; m < c.nmarks; ++m) {
        const auto& mk = c.marks[m];
        const double fx = mk.fx, fxx = mk.fxx, g = c.gzt;
        out += mk.nu * (2 * fx * Qt[m] + fx * Qt[m] * fx + fx * P * fx + fxx * qt[m] + fxx * g * p + fxx * g * qt[m] +
                        2 * g * fx * P + g * Qt[m] * fx + g * fx * Qt[m] * fx + g * fx * P * fx + g * fx * Qt[m] +
                        g * Qt[m]);
    }
    return out;
}

/// Generator of p* in the dual system.
inline double dual_first_drift(const NodeCoeffs& c, double h, double ps, double qs, const double* qts) {
    double jump = 0.0;
    for (int m = 0; m < c.nmarks; ++m) jump += c.marks[m].nu * c.marks[m].fx * qts[m];
    return h * c.gx + c.bx * ps + c.sx * qs + jump;
}

/// Generator of P* in the second-order dual.
inline double dual_second_drift(const NodeCoeffs& c, double h, double ps, double qs, const double* qts, double Ps,
                                double Qs, const double* Qts) {
    const auto psi = psi_row(c, ps, qs, qts);
    double out = h * quadratic_form(psi, c.D2g) + c.bxx * ps + 2 * c.bx * Ps + c.sxx * qs + 2 * c.sx * Qs +
                 c.sx * Ps * c.sx;
    for (int m = 0; m < c.nmarks; ++m) {
        const auto& mk = c.marks[m];
        out += mk.nu * (mk.fxx * qts[m] + 2 * mk.fx * Qts[m] + mk.fx * Qts[m] * mk.fx + mk.fx * Ps * mk.fx);
    }
    return out;
}

}  // namespace fbsdep::adjoint

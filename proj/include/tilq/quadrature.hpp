#ifndef TILQ_QUADRATURE_HPP
#define TILQ_QUADRATURE_HPP

#include <vector>

namespace tilq {

// integral of f over [x_i, x_last] from uniform samples f[i..last],
// composite Simpson with a 3/8 block when the interval count is odd.
// Falls back to the trapezoid rule when fewer than 3 intervals remain.
double integral_tail_simpson(const double* f, int count, double h);

// Cumulative tail integrals I[i] = integral over [x_i, x_end] for every i,
// in one backward pass using 4-point Newton-Cotes interval weights
// (4th order on smooth integrands). values.size() >= 2.
std::vector<double> cumulative_tail_integral(const std::vector<double>& values,
                                             double h);

} // namespace tilq

#endif

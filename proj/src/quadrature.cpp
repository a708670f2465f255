#include "tilq/quadrature.hpp"

#include <cstddef>

namespace tilq {

double integral_tail_simpson(const double* f, int count, double h) {
    const int intervals = count - 1;
    if (intervals <= 0) return 0.0;
    if (intervals == 1) return 0.5 * h * (f[0] + f[1]);
    if (intervals == 2) return h / 3.0 * (f[0] + 4.0 * f[1] + f[2]);

    double total = 0.0;
    int start = 0;
    if (intervals % 2 != 0) {
        // 3/8 rule on the first three intervals, Simpson on the (even) rest
        total += 3.0 * h / 8.0 * (f[0] + 3.0 * f[1] + 3.0 * f[2] + f[3]);
        start = 3;
    }
    if (start < count - 1) {
        double acc = f[start] + f[count - 1];
        for (int i = start + 1; i < count - 1; ++i)
            acc += (((i - start) % 2 == 1) ? 4.0 : 2.0) * f[i];
        total += h / 3.0 * acc;
    }
    return total;
}

std::vector<double> cumulative_tail_integral(const std::vector<double>& values,
                                             double h) {
    const int n = static_cast<int>(values.size());
    std::vector<double> out(n, 0.0);
    if (n < 2) return out;
    if (n < 4) {
        // Not enough points for cubic weights; plain trapezoid
        for (int i = n - 2; i >= 0; --i)
            out[i] = out[i + 1] + 0.5 * h * (values[i] + values[i + 1]);
        return out;
    }
    const double* f = values.data();
    for (int i = n - 2; i >= 0; --i) {
        double seg;
        if (i == 0) {
            seg = h / 24.0 * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3]);
        } else if (i == n - 2) {
            seg = h / 24.0 * (f[n - 4] - 5.0 * f[n - 3] + 19.0 * f[n - 2] +
                              9.0 * f[n - 1]);
        } else {
            // interval [x_i, x_{i+1}] from the cubic through i-1..i+2
            seg = h / 24.0 *
                  (-f[i - 1] + 13.0 * f[i] + 13.0 * f[i + 1] - f[i + 2]);
        }
        out[i] = out[i + 1] + seg;
    }
    return out;
}

} // namespace tilq

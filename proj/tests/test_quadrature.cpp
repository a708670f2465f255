#include <cmath>
#include <doctest.h>

#include "tilq/quadrature.hpp"

using namespace tilq;

TEST_CASE("tail Simpson integrates smooth functions at fourth order") {
    auto run = [](int n) {
        const double h = 1.0 / n;
        std::vector<double> f(n + 1);
        for (int i = 0; i <= n; ++i) f[i] = std::exp(i * h);
        double worst = 0.0;
        for (int i = 0; i <= n; ++i) {
            const double exact = std::exp(1.0) - std::exp(i * h);
            worst = std::max(worst,
                             std::abs(integral_tail_simpson(f.data() + i,
                                                            n + 1 - i, h) -
                                      exact));
        }
        return worst;
    };
    const double e1 = run(50);
    const double e2 = run(100);
    // the single-interval tail falls back to the trapezoid rule, so the
    // worst case over all starting nodes is third order
    CHECK(e1 < 1e-5);
    CHECK(e1 / e2 > 7.0);
}

TEST_CASE("cumulative tail integral is fourth order") {
    auto run = [](int n) {
        const double h = 1.0 / n;
        std::vector<double> f(n + 1);
        for (int i = 0; i <= n; ++i) f[i] = std::sin(3.0 * i * h);
        const auto cum = cumulative_tail_integral(f, h);
        double worst = 0.0;
        for (int i = 0; i <= n; ++i) {
            const double exact =
                (std::cos(3.0 * i * h) - std::cos(3.0)) / 3.0;
            worst = std::max(worst, std::abs(cum[i] - exact));
        }
        return worst;
    };
    const double e1 = run(50);
    const double e2 = run(100);
    CHECK(e1 < 1e-6);
    CHECK(e1 / e2 > 12.0);
}

TEST_CASE("degenerate lengths fall back to the trapezoid rule") {
    std::vector<double> f{1.0, 3.0};
    CHECK(cumulative_tail_integral(f, 0.5)[0] == doctest::Approx(1.0));
    double two[2] = {1.0, 3.0};
    CHECK(integral_tail_simpson(two, 2, 0.5) == doctest::Approx(1.0));
    CHECK(integral_tail_simpson(two, 1, 0.5) == 0.0);
}

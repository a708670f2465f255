#ifndef TILQ_TESTS_HELPERS_HPP
#define TILQ_TESTS_HELPERS_HPP

#include <functional>
#include <vector>

#include "tilq/problem.hpp"

namespace tilq::testing {

// Scalar (n = m = d = 1) model with constant dynamics and node-sampled cost
// weights; two-argument weights depend on the first argument only.
struct ScalarModel {
    double T = 1.0;
    int N = 64;
    double A = 0.0, B = 0.0, b = 0.0;
    double C = 0.0, D = 0.0, sigma = 0.0;
    struct Mark {
        double E = 0.0, F = 0.0, c = 0.0, theta = 0.0;
    };
    std::vector<Mark> marks;
    std::function<double(double)> Q = [](double) { return 0.0; };
    std::function<double(double)> Qbar = [](double) { return 0.0; };
    std::function<double(double)> R = [](double) { return 0.0; };
    std::function<double(double)> G = [](double) { return 0.0; };
    std::function<double(double)> Gbar = [](double) { return 0.0; };
    std::function<double(double)> mu1 = [](double) { return 0.0; };
    std::function<double(double)> mu2 = [](double) { return 0.0; };
    double x0 = 1.0;
};

inline ProblemSpec scalar_spec(const ScalarModel& sm) {
    ProblemSpec spec;
    spec.n = spec.m = spec.d = 1;
    spec.grid = TimeGrid(sm.T, sm.N);
    const int np = spec.grid.size();

    auto s1 = [](double v) {
        Eigen::MatrixXd m(1, 1);
        m(0, 0) = v;
        return m;
    };
    auto v1 = [](double v) {
        Eigen::VectorXd x(1);
        x[0] = v;
        return x;
    };
    auto ctab = [&](double v) { return std::vector<Eigen::MatrixXd>(np, s1(v)); };
    auto cvec = [&](double v) { return std::vector<Eigen::VectorXd>(np, v1(v)); };

    spec.coeffs.A = ctab(sm.A);
    spec.coeffs.B = ctab(sm.B);
    spec.coeffs.b = cvec(sm.b);
    spec.coeffs.C.push_back(ctab(sm.C));
    spec.coeffs.D.push_back(ctab(sm.D));
    spec.coeffs.sigma.push_back(cvec(sm.sigma));
    for (const auto& mk : sm.marks) {
        spec.jumps.marks.push_back(v1(1.0));
        spec.jumps.intensities.push_back(mk.theta);
        spec.coeffs.E.push_back(ctab(mk.E));
        spec.coeffs.F.push_back(ctab(mk.F));
        spec.coeffs.c.push_back(cvec(mk.c));
    }

    auto tri = [&](const std::function<double(double)>& f) {
        TriangularField t(spec.grid, 1, 1);
        for (int i = 0; i < np; ++i) {
            const double v = f(spec.grid.node(i));
            for (int j = i; j < np; ++j) t.at(i, j)[0] = v;
        }
        return t;
    };
    spec.costs.Q = tri(sm.Q);
    spec.costs.Qbar = tri(sm.Qbar);
    spec.costs.R = tri(sm.R);
    spec.costs.G.resize(np);
    spec.costs.Gbar.resize(np);
    spec.costs.mu1.resize(np);
    spec.costs.mu2.resize(np);
    for (int i = 0; i < np; ++i) {
        const double t = spec.grid.node(i);
        spec.costs.G[i] = s1(sm.G(t));
        spec.costs.Gbar[i] = s1(sm.Gbar(t));
        spec.costs.mu1[i] = s1(sm.mu1(t));
        spec.costs.mu2[i] = v1(sm.mu2(t));
    }
    spec.x0 = v1(sm.x0);
    spec.validate();
    return spec;
}

} // namespace tilq::testing

#endif

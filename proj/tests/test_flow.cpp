#include <cmath>
#include <doctest.h>

#include "helpers.hpp"
#include "tilq/analytic.hpp"
#include "tilq/flow.hpp"

using namespace tilq;
using namespace tilq::testing;

TEST_CASE("second-order field: constant solution for trivial dynamics") {
    ScalarModel sm;
    sm.N = 32;
    sm.G = [](double) { return 1.0; };
    SecondOrderField P = solve_second_order(scalar_spec(sm));
    const int np = sm.N + 1;
    for (int i = 0; i < np; ++i)
        for (int j = i; j < np; ++j)
            CHECK(P.P.at(i, j)[0] == doctest::Approx(-1.0).epsilon(1e-14));
}

TEST_CASE("second-order field: scalar exponential closed forms") {
    ScalarModel sm;
    sm.N = 200;
    sm.A = 0.3;
    sm.G = [](double) { return 2.0; };
    ProblemSpec spec = scalar_spec(sm);
    SecondOrderField P = solve_second_order(spec);
    for (int j = 0; j <= sm.N; j += 25) {
        const double s = spec.grid.node(j);
        CHECK(P.P.at(0, j)[0] ==
              doctest::Approx(-2.0 * std::exp(2.0 * 0.3 * (1.0 - s))).epsilon(1e-10));
    }

    // pure-jump variant: dP/ds = -e^2 theta P
    ScalarModel sj;
    sj.N = 200;
    sj.G = [](double) { return 1.0; };
    sj.marks.push_back({0.5, 0.0, 0.0, 2.0});
    ProblemSpec specj = scalar_spec(sj);
    SecondOrderField Pj = solve_second_order(specj);
    for (int j = 0; j <= sj.N; j += 40) {
        const double s = specj.grid.node(j);
        CHECK(Pj.P.at(0, j)[0] ==
              doctest::Approx(-std::exp(0.25 * 2.0 * (1.0 - s))).epsilon(1e-10));
    }
}

TEST_CASE("second-order field stays negative semidefinite under H2") {
    ScalarModel sm;
    sm.N = 64;
    sm.A = 0.1;
    sm.C = 0.3;
    sm.Q = [](double) { return 0.5; };
    sm.G = [](double) { return 1.0; };
    sm.R = [](double) { return 1.0; };
    SecondOrderField P = solve_second_order(scalar_spec(sm));
    for (int i = 0; i <= sm.N; ++i)
        CHECK(P.P.at(i, i)[0] <= 1e-8);
}

TEST_CASE("theta gate: identity weight, portfolio shape, and failure") {
    ScalarModel sm;
    sm.N = 8;
    sm.R = [](double) { return 1.0; };
    ProblemSpec spec = scalar_spec(sm);
    Eigen::MatrixXd M(1, 1);
    M(0, 0) = 0.7;
    ThetaResult th = theta_matrix(spec, 3, M);
    CHECK(th.theta(0, 0) == doctest::Approx(1.0));
    CHECK(th.cond == doctest::Approx(1.0));

    // portfolio shape: Theta = 1 / (M rho)
    ScalarModel mv;
    mv.N = 8;
    mv.D = 0.2;
    mv.marks.push_back({0.0, 0.1, 0.0, 1.0});
    ProblemSpec mvspec = scalar_spec(mv);
    const double rho = 0.2 * 0.2 + 0.1 * 0.1 * 1.0;
    ThetaResult th2 = theta_matrix(mvspec, 0, M);
    CHECK(th2.theta(0, 0) == doctest::Approx(1.0 / (0.7 * rho)).epsilon(1e-14));

    ScalarModel sing;
    sing.N = 8;
    CHECK_THROWS_AS(theta_matrix(scalar_spec(sing), 0, M), SolverError);
}

TEST_CASE("marching: zero costs with control weight give the zero solution") {
    ScalarModel sm;
    sm.N = 40;
    sm.A = 0.2;
    sm.B = 1.0;
    sm.C = 0.3;
    sm.D = 0.5;
    sm.R = [](double) { return 1.0; };
    FlowResult res = solve_flow_marching(scalar_spec(sm));
    CHECK(res.flow.M.max_abs() == 0.0);
    CHECK(res.flow.Mbar.max_abs() == 0.0);
    CHECK(res.flow.Upsilon.max_abs() == 0.0);
    CHECK(res.flow.phi.max_abs() == 0.0);
    for (int i = 0; i <= sm.N; ++i) {
        CHECK(res.law.Psi[i](0, 0) == 0.0);
        CHECK(res.law.psi[i][0] == 0.0);
    }
}

TEST_CASE("marching reproduces the regulator diagonal closed form") {
    // a = 0, b = 1, h == 1: the diagonal solves m' = m^2 + m, m(T) = 1,
    // i.e. m(s) = 1 / (2 e^{T-s} - 1)
    RegulatorParams rp;
    rp.grid = TimeGrid(1.0, 400);
    rp.a = 0.0;
    rp.b = 1.0;
    rp.sigma = 0.2;
    rp.h = sampled(rp.grid, [](double) { return 1.0; });
    ProblemSpec spec = to_problem_spec(rp);
    FlowResult res = solve_flow_marching(spec);
    double worst = 0.0;
    for (int i = 0; i <= 400; ++i) {
        const double s = spec.grid.node(i);
        const double oracle = 1.0 / (2.0 * std::exp(1.0 - s) - 1.0);
        worst = std::max(worst, std::abs(res.flow.M.at(i, i)[0] - oracle));
    }
    CHECK(worst < 2e-6);
    CHECK(res.flow.M.at(400, 400)[0] == doctest::Approx(1.0));

    // terminal row carries the cost data exactly
    for (int i = 0; i <= 400; i += 57) {
        CHECK(res.flow.M.at(i, 400)[0] == spec.costs.G[i](0, 0));
        CHECK(res.flow.Upsilon.at(i, 400)[0] == spec.costs.mu1[i](0, 0));
        CHECK(res.flow.Mbar.at(i, 400)[0] == 0.0);
        CHECK(res.flow.phi.at(i, 400)[0] == 0.0);
    }
}

TEST_CASE("marching error on the regulator diagonal decays at order >= 1.8") {
    auto worst_err = [](int N) {
        RegulatorParams rp;
        rp.grid = TimeGrid(1.0, N);
        rp.h = sampled(rp.grid, [](double) { return 1.0; });
        ProblemSpec spec = to_problem_spec(rp);
        FlowResult res = solve_flow_marching(spec);
        double worst = 0.0;
        for (int i = 0; i <= N; ++i) {
            const double s = spec.grid.node(i);
            const double oracle = 1.0 / (2.0 * std::exp(1.0 - s) - 1.0);
            worst = std::max(worst, std::abs(res.flow.M.at(i, i)[0] - oracle));
        }
        return worst;
    };
    const double e1 = worst_err(100);
    const double e2 = worst_err(200);
    CHECK(std::log2(e1 / e2) >= 1.8);
}

TEST_CASE("faithful quadratic-tracking flow is exactly constant in s") {
    // mu1 = -h makes M(t,s) = h(t) the exact solution and the law vanish
    RegulatorParams rp;
    rp.grid = TimeGrid(1.0, 100);
    rp.mu1_sign = -1;
    rp.h = sampled(rp.grid, [](double t) { return 1.0 / (1.0 + 0.7 * t); });
    ProblemSpec spec = to_problem_spec(rp);
    FlowResult res = solve_flow_marching(spec);
    for (int i = 0; i <= 100; i += 9)
        for (int j = i; j <= 100; j += 11) {
            CHECK(res.flow.M.at(i, j)[0] ==
                  doctest::Approx(rp.h[i]).epsilon(1e-12));
        }
    for (int i = 0; i <= 100; ++i)
        CHECK(std::abs(res.law.Psi[i](0, 0)) < 1e-12);
}

TEST_CASE("picard agrees with marching and contracts monotonically") {
    RegulatorParams rp;
    rp.grid = TimeGrid(1.0, 200);
    rp.h = sampled(rp.grid, [](double) { return 1.0; });
    ProblemSpec spec = to_problem_spec(rp);
    FlowResult march = solve_flow_marching(spec);
    PicardResult pic = solve_flow_picard(spec, 10.0, 1e-12, 200);

    CHECK(pic.flow.M.max_abs_diff(march.flow.M) < 1e-10);
    CHECK(pic.flow.Mbar.max_abs_diff(march.flow.Mbar) < 1e-10);
    CHECK(pic.flow.Upsilon.max_abs_diff(march.flow.Upsilon) < 1e-10);
    CHECK(pic.flow.phi.max_abs_diff(march.flow.phi) < 1e-10);
    for (int i = 0; i <= 200; ++i)
        CHECK((pic.law.Psi[i] - march.law.Psi[i]).norm() < 1e-10);

    REQUIRE(pic.trace.size() >= 3);
    for (std::size_t k = 2; k < pic.trace.size(); ++k)
        CHECK(pic.trace[k] < pic.trace[k - 1]);
}

TEST_CASE("picard on the zero-cost model converges in one iteration") {
    ScalarModel sm;
    sm.N = 16;
    sm.B = 1.0;
    sm.R = [](double) { return 1.0; };
    PicardResult pic = solve_flow_picard(scalar_spec(sm), 10.0, 1e-12, 50);
    CHECK(pic.trace.size() == 1);
    CHECK(pic.trace[0] == 0.0);
    CHECK(pic.flow.M.max_abs() == 0.0);
}

TEST_CASE("upsilon field is decoupled and matches an independent solve") {
    ScalarModel sm;
    sm.N = 80;
    sm.A = 0.4;
    sm.B = 1.0;
    sm.R = [](double) { return 1.0; };
    sm.G = [](double) { return 0.5; };
    sm.mu1 = [](double t) { return 1.0 + t; };
    ProblemSpec spec = scalar_spec(sm);
    FlowResult res = solve_flow_marching(spec);

    // test-side RK4 for dU/ds = -A U with the same stage structure
    const double h = spec.grid.step();
    for (int i = 0; i <= sm.N; i += 13) {
        double u = sm.mu1(spec.grid.node(i));
        for (int j = sm.N - 1; j >= i; --j) {
            auto f = [&](double x) { return -sm.A * x; };
            const double H = -h;
            const double k1 = f(u);
            const double k2 = f(u + 0.5 * H * k1);
            const double k3 = f(u + 0.5 * H * k2);
            const double k4 = f(u + H * k3);
            u += H / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            CHECK(std::abs(res.flow.Upsilon.at(i, j)[0] - u) < 1e-12);
        }
    }
}

TEST_CASE("feedback residual is zero by construction and localizes faults") {
    ScalarModel sm;
    sm.N = 50;
    sm.A = 0.1;
    sm.B = 1.0;
    sm.D = 0.3;
    sm.R = [](double) { return 1.0; };
    sm.G = [](double) { return 1.0; };
    sm.mu1 = [](double t) { return 0.5 * t; };
    ProblemSpec spec = scalar_spec(sm);
    FlowResult res = solve_flow_marching(spec);

    auto clean = feedback_residual(spec, res.flow, res.law);
    for (double r : clean) CHECK(r < 1e-10);

    FeedbackLaw bad = res.law;
    bad.Psi[17](0, 0) += 0.1;
    auto faulty = feedback_residual(spec, res.flow, bad);
    for (int i = 0; i <= sm.N; ++i) {
        if (i == 17)
            CHECK(faulty[i] == doctest::Approx(0.1).epsilon(1e-9));
        else
            CHECK(faulty[i] < 1e-10);
    }
}

TEST_CASE("matrix-valued flow solves the diagonal Riccati system (n = 2)") {
    // A = C = D = 0, B = I, R = I, G diagonal: each diagonal entry solves
    // m' = m^2 with m(T) = g, i.e. m(s) = g / (1 + g (T - s)); flagged
    // experimental for n > 1
    const int N = 200;
    ProblemSpec spec;
    spec.n = 2;
    spec.m = 2;
    spec.d = 1;
    spec.grid = TimeGrid(1.0, N);
    const int np = N + 1;
    spec.coeffs.A.assign(np, Eigen::MatrixXd::Zero(2, 2));
    spec.coeffs.B.assign(np, Eigen::MatrixXd::Identity(2, 2));
    spec.coeffs.b.assign(np, Eigen::VectorXd::Zero(2));
    spec.coeffs.C.push_back(
        std::vector<Eigen::MatrixXd>(np, Eigen::MatrixXd::Zero(2, 2)));
    spec.coeffs.D.push_back(
        std::vector<Eigen::MatrixXd>(np, Eigen::MatrixXd::Zero(2, 2)));
    spec.coeffs.sigma.push_back(
        std::vector<Eigen::VectorXd>(np, Eigen::VectorXd::Zero(2)));
    spec.costs.Q = TriangularField(spec.grid, 2, 2);
    spec.costs.Qbar = TriangularField(spec.grid, 2, 2);
    spec.costs.R = TriangularField(spec.grid, 2, 2);
    for (int i = 0; i < np; ++i)
        for (int j = i; j < np; ++j)
            spec.costs.R.set(i, j, Eigen::MatrixXd::Identity(2, 2));
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(2, 2);
    G(0, 0) = 1.0;
    G(1, 1) = 2.0;
    spec.costs.G.assign(np, G);
    spec.costs.Gbar.assign(np, Eigen::MatrixXd::Zero(2, 2));
    spec.costs.mu1.assign(np, Eigen::MatrixXd::Zero(2, 2));
    spec.costs.mu2.assign(np, Eigen::VectorXd::Zero(2));
    spec.x0 = Eigen::VectorXd::Ones(2);
    spec.validate();

    FlowResult res = solve_flow_marching(spec);
    CHECK(res.flow.diagnostics.experimental);
    for (int i = 0; i <= N; i += 20) {
        const double s = spec.grid.node(i);
        const Eigen::MatrixXd Md = res.flow.M.diag(i);
        // gain interpolation limits the scheme to second order
        CHECK(Md(0, 0) == doctest::Approx(1.0 / (1.0 + (1.0 - s))).epsilon(1e-4));
        CHECK(Md(1, 1) ==
              doctest::Approx(2.0 / (1.0 + 2.0 * (1.0 - s))).epsilon(1e-4));
        CHECK(std::abs(Md(0, 1)) < 1e-10);
    }
}

TEST_CASE("two-driver diffusion terms sum in the second-order equation") {
    // d = 2 with C_1, C_2 and no control mixing: P(s) = -g e^{(c1^2+c2^2)(T-s)}
    const int N = 150;
    ProblemSpec spec;
    spec.n = 1;
    spec.m = 1;
    spec.d = 2;
    spec.grid = TimeGrid(1.0, N);
    const int np = N + 1;
    auto s1 = [](double v) {
        Eigen::MatrixXd m(1, 1);
        m(0, 0) = v;
        return m;
    };
    spec.coeffs.A.assign(np, s1(0.0));
    spec.coeffs.B.assign(np, s1(0.0));
    spec.coeffs.b.assign(np, Eigen::VectorXd::Zero(1));
    for (double cj : {0.3, 0.4}) {
        spec.coeffs.C.push_back(std::vector<Eigen::MatrixXd>(np, s1(cj)));
        spec.coeffs.D.push_back(std::vector<Eigen::MatrixXd>(np, s1(0.0)));
        spec.coeffs.sigma.push_back(
            std::vector<Eigen::VectorXd>(np, Eigen::VectorXd::Zero(1)));
    }
    spec.costs.Q = TriangularField(spec.grid, 1, 1);
    spec.costs.Qbar = TriangularField(spec.grid, 1, 1);
    spec.costs.R = TriangularField(spec.grid, 1, 1);
    for (int i = 0; i < np; ++i)
        for (int j = i; j < np; ++j) spec.costs.R.at(i, j)[0] = 1.0;
    spec.costs.G.assign(np, s1(1.0));
    spec.costs.Gbar.assign(np, s1(0.0));
    spec.costs.mu1.assign(np, s1(0.0));
    spec.costs.mu2.assign(np, Eigen::VectorXd::Zero(1));
    spec.x0 = Eigen::VectorXd::Ones(1);
    spec.validate();

    SecondOrderField P = solve_second_order(spec);
    const double rate = 0.09 + 0.16;
    for (int j = 0; j <= N; j += 30) {
        const double s = spec.grid.node(j);
        CHECK(P.P.at(0, j)[0] ==
              doctest::Approx(-std::exp(rate * (1.0 - s))).epsilon(1e-9));
    }

    FlowResult res = solve_flow_marching(spec);
    for (int j = 0; j <= N; j += 30) {
        const double s = spec.grid.node(j);
        CHECK(res.flow.M.at(0, j)[0] ==
              doctest::Approx(std::exp(rate * (1.0 - s))).epsilon(1e-9));
    }
}

TEST_CASE("theta gate failure names node 0 for a control-free singular weight") {
    ScalarModel sm;
    sm.N = 10;
    sm.B = 1.0;
    sm.G = [](double) { return 1.0; };
    // R == 0 and D = F = 0: S(t) = 0 everywhere
    try {
        solve_flow_marching(scalar_spec(sm));
        FAIL("expected SolverError");
    } catch (const SolverError& e) {
        CHECK(std::string(e.what()).find("0") != std::string::npos);
        CHECK(std::string(e.what()).find("theta gate") != std::string::npos);
    }
}

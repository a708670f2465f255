#include <cmath>
#include <doctest.h>

#include "helpers.hpp"
#include "tilq/verify.hpp"

using namespace tilq;
using namespace tilq::testing;

namespace {

Eigen::VectorXd v1(double v) {
    Eigen::VectorXd x(1);
    x[0] = v;
    return x;
}

} // namespace

TEST_CASE("spike on a control-cost-only model returns half the square") {
    // B = D = F = 0 with R = 1 and u == 0: the state ignores the control,
    // so dJ/eps = |v|^2 / 2 exactly, with zero variance
    ScalarModel sm;
    sm.N = 50;
    sm.sigma = 0.4;
    sm.R = [](double) { return 1.0; };
    ProblemSpec spec = scalar_spec(sm);
    ControlTable tab;
    tab.grid = spec.grid;
    tab.u.assign(51, Eigen::VectorXd::Zero(1));
    Control ctl;
    ctl.table = &tab;
    SpikeReport rep = spike_test(spec, ctl, 10, v1(0.8), {1, 2, 4, 8}, 100, 9,
                                 v1(0.0));
    for (double f : rep.dj_over_eps)
        CHECK(f == doctest::Approx(0.5 * 0.8 * 0.8).epsilon(1e-12));
    CHECK(rep.extrapolated == doctest::Approx(0.32).epsilon(1e-12));
    CHECK(rep.extrapolated_stderr < 1e-14);
    CHECK(rep.equilibrium_consistent);
}

TEST_CASE("equilibrium law passes the spike test, injected offset fails") {
    RegulatorParams rp;
    rp.grid = TimeGrid(1.0, 100);
    rp.sigma = 0.2;
    rp.c = 0.1;
    rp.jump_intensity = 1.0;
    rp.h = sampled(rp.grid, [](double) { return 1.0; });
    ProblemSpec spec = to_problem_spec(rp);
    FlowResult res = solve_flow_marching(spec);
    Control ctl;
    ctl.law = &res.law;

    for (double vv : {1.0, -0.7}) {
        SpikeReport rep =
            spike_test(spec, ctl, 40, v1(vv), {1, 2, 4, 8}, 20000, 21);
        CHECK(rep.equilibrium_consistent);
        // the quadratic term keeps the limit strictly positive here
        CHECK(rep.extrapolated > 0.0);
    }

    // offset the control at one node and attack it with the adversarial v
    FeedbackLaw bad = res.law;
    const double delta = 0.5;
    bad.psi[40][0] += delta;  // u gets -delta there
    Control cbad;
    cbad.law = &bad;
    // residual K = S * (-delta); minimizing v = K in the scalar S = 1 case
    SpikeReport fail =
        spike_test(spec, cbad, 40, v1(delta), {1, 2, 4, 8}, 20000, 21);
    CHECK_FALSE(fail.equilibrium_consistent);
    CHECK(fail.extrapolated < -0.05);
}

TEST_CASE("first-order residual vanishes for the solver's own law") {
    RegulatorParams rp;
    rp.grid = TimeGrid(1.0, 80);
    rp.sigma = 0.2;
    rp.h = sampled(rp.grid, [](double) { return 1.0; });
    ProblemSpec spec = to_problem_spec(rp);
    FlowResult res = solve_flow_marching(spec);
    Control ctl;
    ctl.law = &res.law;
    auto states = mean_state_path(spec, ctl, 0, spec.x0);
    auto resid = first_order_condition(spec, res.flow, res.law, states);
    for (double r : resid) CHECK(r < 1e-10);
}

TEST_CASE("first-order residual is linear in an injected perturbation") {
    ScalarModel sm;
    sm.N = 40;
    sm.A = 0.1;
    sm.B = 1.0;
    sm.D = 0.3;
    sm.R = [](double) { return 1.0; };
    sm.G = [](double) { return 1.0; };
    ProblemSpec spec = scalar_spec(sm);
    FlowResult res = solve_flow_marching(spec);
    Control ctl;
    ctl.law = &res.law;
    auto states = mean_state_path(spec, ctl, 0, spec.x0);

    FeedbackLaw pert = res.law;
    const double delta = 0.2;
    pert.psi[15][0] += delta;
    auto r1 = first_order_condition(spec, res.flow, pert, states);
    // S = R + D^T M D + 0 at node 15
    const double S = 1.0 + 0.3 * res.flow.M.at(15, 15)[0] * 0.3;
    CHECK(r1[15] == doctest::Approx(S * delta).epsilon(1e-9));
    for (int i = 0; i <= 40; ++i)
        if (i != 15) CHECK(r1[i] < 1e-10);

    pert.psi[15][0] += delta;  // double the perturbation
    auto r2 = first_order_condition(spec, res.flow, pert, states);
    CHECK(r2[15] == doctest::Approx(2.0 * r1[15]).epsilon(1e-9));
}

TEST_CASE("first-order residual is zero on the zero-cost model") {
    ScalarModel sm;
    sm.N = 20;
    sm.B = 1.0;
    sm.R = [](double) { return 1.0; };
    ProblemSpec spec = scalar_spec(sm);
    FlowResult res = solve_flow_marching(spec);
    Control ctl;
    ctl.law = &res.law;
    auto states = mean_state_path(spec, ctl, 0, spec.x0);
    auto resid = first_order_condition(spec, res.flow, res.law, states);
    for (double r : resid) CHECK(r == 0.0);
}

TEST_CASE("second-order condition verdicts") {
    // H2-satisfying instance passes
    ScalarModel ok;
    ok.N = 30;
    ok.A = 0.1;
    ok.D = 0.4;
    ok.R = [](double) { return 1.0; };
    ok.G = [](double) { return 1.0; };
    ok.Q = [](double) { return 0.2; };
    ProblemSpec spec = scalar_spec(ok);
    SecondOrderReport rep = second_order_condition(spec, solve_second_order(spec));
    CHECK(rep.pass);
    for (double v : rep.min_eig) CHECK(v >= -1e-8);

    // R == -1 with no noise control fails everywhere with eigenvalue -1
    ScalarModel bad;
    bad.N = 30;
    bad.R = [](double) { return -1.0; };
    ProblemSpec bspec = scalar_spec(bad);
    SecondOrderReport rep2 =
        second_order_condition(bspec, solve_second_order(bspec));
    CHECK_FALSE(rep2.pass);
    for (double v : rep2.min_eig) CHECK(v == doctest::Approx(-1.0));

    // R == 0, D = 1, P = -p0 < 0: the weight is +p0, pass
    ScalarModel mixed;
    mixed.N = 30;
    mixed.D = 1.0;
    ProblemSpec mspec = scalar_spec(mixed);
    SecondOrderField P{TriangularField(mspec.grid, 1, 1)};
    for (int i = 0; i <= 30; ++i)
        for (int j = i; j <= 30; ++j) P.P.at(i, j)[0] = -0.7;
    SecondOrderReport rep3 = second_order_condition(mspec, P);
    CHECK(rep3.pass);
    for (double v : rep3.min_eig) CHECK(v == doctest::Approx(0.7));
}

TEST_CASE("second-order verdict ignores a zero-intensity mark") {
    ScalarModel sm;
    sm.N = 20;
    sm.D = 0.5;
    sm.R = [](double) { return 1.0; };
    sm.G = [](double) { return 1.0; };
    ProblemSpec spec = scalar_spec(sm);
    SecondOrderReport rep = second_order_condition(spec, solve_second_order(spec));

    ScalarModel enlarged = sm;
    enlarged.marks.push_back({0.4, 0.7, 0.1, 0.0});  // theta = 0
    ProblemSpec espec = scalar_spec(enlarged);
    SecondOrderReport rep2 =
        second_order_condition(espec, solve_second_order(espec));
    CHECK(rep.pass == rep2.pass);
    for (std::size_t i = 0; i < rep.min_eig.size(); ++i)
        CHECK(rep.min_eig[i] == doctest::Approx(rep2.min_eig[i]).epsilon(1e-12));
}

TEST_CASE("variational processes are skipped when sourceless") {
    ScalarModel sm;
    sm.N = 20;
    sm.sigma = 0.3;
    ProblemSpec spec = scalar_spec(sm);
    VariationOrderReport rep =
        variation_order_test(spec, 0, v1(1.0), {1, 2, 4}, 100, 3);
    CHECK(rep.y_skipped);
    CHECK(rep.z_skipped);
    CHECK_FALSE(rep.note.empty());
}

TEST_CASE("variation orders: diffusion source gives slope one") {
    ScalarModel sm;
    sm.N = 128;
    sm.A = 0.1;
    sm.D = 1.0;
    ProblemSpec spec = scalar_spec(sm);
    VariationOrderReport rep =
        variation_order_test(spec, 0, v1(1.0), {1, 2, 4, 8, 16}, 30000, 77);
    CHECK_FALSE(rep.y_skipped);
    CHECK(rep.z_skipped);
    CHECK(rep.slope_y > 0.8);
    CHECK(rep.slope_y < 1.2);
    CHECK(rep.y_mean_ok);
}

TEST_CASE("variation orders: drift source gives slope two") {
    ScalarModel sm;
    sm.N = 128;
    sm.A = 0.1;
    sm.B = 1.0;
    sm.C = 0.3;
    ProblemSpec spec = scalar_spec(sm);
    VariationOrderReport rep =
        variation_order_test(spec, 0, v1(1.0), {1, 2, 4, 8, 16}, 30000, 78);
    CHECK(rep.y_skipped);
    CHECK_FALSE(rep.z_skipped);
    CHECK(rep.slope_z > 1.8);
    CHECK(rep.slope_z < 2.2);
}

TEST_CASE("inconsistency demo exhibits the contradiction") {
    CounterexampleParams p;
    p.grid = TimeGrid(1.0, 64);
    p.b = 1.0;
    p.sigma = 1.0;
    p.h = sampled(p.grid, [](double) { return 1.0; });
    p.t_index = 0;
    p.x = 0.0;
    InconsistencyReport rep = inconsistency_demo(p, 32, 20000, 99);

    CHECK(rep.M_t[0] == doctest::Approx(0.5));
    CHECK(rep.resolved_at_r == 0.0);
    CHECK(rep.contradiction);
    CHECK(rep.margin_mean_abs > 5.0 * rep.margin_stderr);
    CHECK_FALSE(rep.precommitted_spike.equilibrium_consistent);
    CHECK(rep.companion_spike.equilibrium_consistent);
    for (double g : rep.companion_gain) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("degenerate deterministic start has no contradiction signal") {
    // sigma = 0 started at the fixed point x: the precommitted control is
    // identically zero along the only path
    CounterexampleParams p;
    p.grid = TimeGrid(1.0, 32);
    p.b = 1.0;
    p.sigma = 0.0;
    p.h = sampled(p.grid, [](double) { return 1.0; });
    p.t_index = 0;
    p.x = 0.4;
    PrecommittedResult pre = counterexample_precommitted(p);
    Control ctl;
    ctl.law = &pre.precommitted;
    Eigen::VectorXd xi(1);
    xi[0] = 0.4;
    PathEnsemble ens = simulate(pre.problem, ctl, 0, xi, 100, 1);
    for (long q = 0; q < 100; ++q)
        for (int i = 0; i <= 32; ++i)
            CHECK(ens.state(q, i)[0] == doctest::Approx(0.4).epsilon(1e-14));
}

TEST_CASE("spike test validates the ladder") {
    ScalarModel sm;
    sm.N = 10;
    sm.R = [](double) { return 1.0; };
    ProblemSpec spec = scalar_spec(sm);
    ControlTable tab;
    tab.grid = spec.grid;
    tab.u.assign(11, Eigen::VectorXd::Zero(1));
    Control ctl;
    ctl.table = &tab;
    CHECK_THROWS_AS(
        spike_test(spec, ctl, 8, v1(1.0), {1, 4}, 100, 1, v1(0.0)),
        ConfigError);  // window 8 + 4 exceeds N = 10
    CHECK_THROWS_AS(
        spike_test(spec, ctl, 0, v1(1.0), {0}, 100, 1, v1(0.0)),
        ConfigError);
}

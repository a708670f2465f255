#include <doctest.h>
#include <json.hpp>

#include "helpers.hpp"
#include "tilq/config.hpp"
#include "tilq/problem.hpp"

using nlohmann::json;
using namespace tilq;

namespace {

json minimal_config() {
    return json::parse(R"({
      "dims": {"n": 1, "m": 1, "d": 1},
      "grid": {"T": 1.0, "N": 4}
    })");
}

} // namespace

TEST_CASE("grid pins the last node to the horizon") {
    TimeGrid g(0.7, 7);
    CHECK(g.node(0) == 0.0);
    CHECK(g.node(7) == 0.7);  // exact, not 7 * h
    CHECK(g.step() == doctest::Approx(0.1));
    CHECK_THROWS_AS(TimeGrid(1.0, 1), ConfigError);
    CHECK_THROWS_AS(TimeGrid(-1.0, 4), ConfigError);
}

TEST_CASE("zero config builds an all-zero spec") {
    json cfg = minimal_config();
    cfg["coeff"] = {{"A", {{"family", "constant"}, {"value", 0.0}}}};
    ProblemSpec spec = build_problem(cfg);
    CHECK(spec.n == 1);
    CHECK(spec.jumps.count() == 0);
    for (const auto& a : spec.coeffs.A) CHECK(a(0, 0) == 0.0);
    CHECK(spec.costs.Q.max_abs() == 0.0);
    CHECK(spec.costs.G[0](0, 0) == 0.0);
    CHECK(spec.x0[0] == 0.0);
}

TEST_CASE("regulator-style config samples families onto the grid") {
    json cfg = json::parse(R"({
      "dims": {"n": 1, "m": 1, "d": 1},
      "grid": {"T": 1.0, "N": 10},
      "jumps": {"marks": [1.0], "intensities": [0.5]},
      "coeff": {
        "A": {"family": "constant", "value": 0.1},
        "B": {"family": "constant", "value": 1.0},
        "sigma": [{"family": "constant", "value": 0.2}],
        "c": [{"family": "constant", "value": 0.1}]
      },
      "cost": {
        "R": {"family": "constant", "value": 1.0},
        "G": {"family": "hyperbolic", "kappa": 1.0},
        "mu1": {"family": "hyperbolic", "kappa": 1.0}
      },
      "x0": 1.0
    })");
    ProblemSpec spec = build_problem(cfg);
    CHECK(spec.jumps.intensities[0] == 0.5);
    // h(t) = 1/(1 + t) sampled at t = 0.5
    CHECK(spec.costs.G[5](0, 0) == doctest::Approx(1.0 / 1.5).epsilon(1e-15));
    CHECK(spec.costs.mu1[5](0, 0) == doctest::Approx(1.0 / 1.5).epsilon(1e-15));
    CHECK(spec.costs.R.mat(3, 7)(0, 0) == 1.0);
    CHECK(spec.coeffs.c[0][2][0] == 0.1);
}

TEST_CASE("negative intensity is rejected with the key path") {
    json cfg = minimal_config();
    cfg["jumps"] = {{"marks", {1.0}}, {"intensities", {-0.5}}};
    try {
        build_problem(cfg);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("jumps.intensities[0]") !=
              std::string::npos);
    }
}

TEST_CASE("unknown family and non-finite samples are rejected by key") {
    json cfg = minimal_config();
    cfg["coeff"] = {{"A", {{"family", "polynomial"}}}};
    try {
        build_problem(cfg);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("coeff.A") != std::string::npos);
        CHECK(std::string(e.what()).find("polynomial") != std::string::npos);
    }

    json cfg2 = minimal_config();
    cfg2["coeff"] = {{"A", {{"table", {0.0, 1.0, 2.0}}}}};  // wrong length
    CHECK_THROWS_AS(build_problem(cfg2), ConfigError);
}

TEST_CASE("serialize round-trips every table bit-exactly") {
    json cfg = json::parse(R"({
      "dims": {"n": 1, "m": 1, "d": 1},
      "grid": {"T": 1.0, "N": 8},
      "jumps": {"marks": [1.0], "intensities": [0.7]},
      "coeff": {
        "A": {"family": "affine", "a0": 0.03, "a1": 0.11},
        "B": {"family": "exp", "delta": 0.4},
        "D": [{"family": "constant", "value": 0.2}],
        "F": [{"family": "quasi_hyperbolic", "beta": 0.8, "delta": 0.3}]
      },
      "cost": {
        "Q": {"family": "hyperbolic", "kappa": 2.0},
        "R": {"family": "constant", "value": 1.0},
        "G": {"family": "constant", "value": 0.5},
        "mu1": {"family": "affine", "a0": 1.0, "a1": 1.0}
      },
      "x0": 0.3
    })");
    ProblemSpec spec = build_problem(cfg);
    ProblemSpec back = build_problem(serialize(spec));
    REQUIRE(back.grid == spec.grid);
    for (int i = 0; i < spec.grid.size(); ++i) {
        CHECK(back.coeffs.A[i](0, 0) == spec.coeffs.A[i](0, 0));
        CHECK(back.coeffs.B[i](0, 0) == spec.coeffs.B[i](0, 0));
        CHECK(back.coeffs.F[0][i](0, 0) == spec.coeffs.F[0][i](0, 0));
        CHECK(back.costs.mu1[i](0, 0) == spec.costs.mu1[i](0, 0));
    }
    CHECK(back.costs.Q.max_abs_diff(spec.costs.Q) == 0.0);
    CHECK(back.costs.R.max_abs_diff(spec.costs.R) == 0.0);
    CHECK(back.x0[0] == spec.x0[0]);
}

TEST_CASE("symmetrization is idempotent on already-symmetric weights") {
    json cfg = json::parse(R"({
      "dims": {"n": 2, "m": 1, "d": 1},
      "grid": {"T": 1.0, "N": 4},
      "cost": {"G": {"family": "constant", "value": [[2.0, 0.5], [0.5, 1.0]]}}
    })");
    ProblemSpec spec = build_problem(cfg);
    CHECK(spec.costs.G[0](0, 1) == 0.5);
    CHECK(spec.costs.G[0](1, 0) == 0.5);

    // a skew part is averaged away
    cfg["cost"]["G"]["value"] = {{2.0, 1.0}, {0.0, 1.0}};
    ProblemSpec spec2 = build_problem(cfg);
    CHECK(spec2.costs.G[0](0, 1) == 0.5);
    CHECK(spec2.costs.G[0](1, 0) == 0.5);
}

TEST_CASE("H2 report flags indefinite weights and zero model passes") {
    using namespace tilq::testing;
    ScalarModel zero;
    zero.R = [](double) { return 0.0; };
    ValidationReport rep = check_h1_h2(scalar_spec(zero));
    CHECK(rep.h2_ok);
    for (double v : rep.min_eig_R_diag) CHECK(v == 0.0);

    ScalarModel bad = zero;
    bad.R = [](double) { return -1.0; };
    ValidationReport rep2 = check_h1_h2(scalar_spec(bad));
    CHECK_FALSE(rep2.h2_ok);
    CHECK(rep2.min_eig_R_diag[0] == doctest::Approx(-1.0));
}

TEST_CASE("mean-variance shape satisfies H2") {
    using namespace tilq::testing;
    ScalarModel mv;
    mv.D = 0.2;
    mv.G = [](double) { return 1.0; };
    mv.Gbar = [](double) { return -1.0; };
    ValidationReport rep = check_h1_h2(scalar_spec(mv));
    CHECK(rep.h2_ok);
}

TEST_CASE("quasi-hyperbolic discount triggers the continuity warning") {
    json cfg = minimal_config();
    cfg["grid"]["N"] = 10;
    cfg["cost"] = {
        {"G", {{"family", "quasi_hyperbolic"}, {"beta", 0.3}, {"delta", 0.0}}}};
    ProblemSpec spec = build_problem(cfg);
    ValidationReport rep = check_h1_h2(spec);
    CHECK_FALSE(rep.h1_ok);
    bool found = false;
    for (const auto& w : rep.h1_warnings)
        if (w.find("cost.G") != std::string::npos) found = true;
    CHECK(found);
}

TEST_CASE("ellipticity check evaluates the defining sum") {
    using namespace tilq::testing;
    ScalarModel sm;
    sm.D = 0.2;
    EllipticityReport rep = ellipticity_check(scalar_spec(sm), 0.01);
    CHECK(rep.pass);
    for (double v : rep.rho) CHECK(v == doctest::Approx(0.04).epsilon(1e-15));

    ScalarModel degenerate;
    EllipticityReport rep2 = ellipticity_check(scalar_spec(degenerate), 1e-12);
    CHECK_FALSE(rep2.pass);
    for (double v : rep2.rho) CHECK(v == 0.0);

    ScalarModel mixed;
    mixed.D = 0.1;
    mixed.marks.push_back({0.0, 0.3, 0.0, 1.0});
    EllipticityReport rep3 = ellipticity_check(scalar_spec(mixed), 0.01);
    CHECK(rep3.pass);
    for (double v : rep3.rho) CHECK(v == doctest::Approx(0.10).epsilon(1e-14));

    // rho equals beta^2 exactly when there are no jumps
    CHECK(rep.rho[0] == 0.2 * 0.2);
}

TEST_CASE("triangular field rejects evaluation below the diagonal") {
    TimeGrid g(1.0, 4);
    TriangularField f(g, 1, 1);
    CHECK_THROWS_AS(f.at(3, 2), ConfigError);
    CHECK_NOTHROW(f.at(2, 2));
}

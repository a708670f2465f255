#ifndef TILQ_ANALYTIC_HPP
#define TILQ_ANALYTIC_HPP

#include <functional>
#include <vector>

#include "tilq/flow.hpp"
#include "tilq/problem.hpp"

namespace tilq {

std::vector<double> sampled(const TimeGrid& grid,
                            const std::function<double(double)>& fn);

// Scalar mean-variance market: riskless rate r, stock drift alpha,
// volatility beta, jump sizes gamma_k with intensities theta_k, and the
// state/time dependent risk-aversion weights mu1, mu2 (positive). The cost
// carries the terminal-mean reward with a negative sign, so the stored
// terminal weights are mu1_cost = -mu1, mu2_cost = -mu2.
struct MeanVarianceParams {
    TimeGrid grid;
    std::vector<double> r, alpha, beta;       // per node
    std::vector<std::vector<double>> gamma;   // [mark][node]
    std::vector<double> intensities;
    std::vector<double> mu1, mu2;             // per node, positive
    double ellipticity_floor = 1e-8;
    double x0 = 1.0;
};

ProblemSpec to_problem_spec(const MeanVarianceParams& params);

// Closed forms evaluated by quadrature of the inner integrals (composite
// Simpson): M(s) = e^{2 int r}(1 + int e^{-int r} mu1 (alpha-r)^2/rho),
// Mbar = -M, Upsilon(t,s) = mu1_cost(t) e^{int_s^T r}, phi likewise with
// mu2_cost, gains Psi(s) = (alpha-r) Upsilon(s,s)/(M rho) and the same for
// psi with phi.
FlowResult mean_variance_solution(const MeanVarianceParams& params);

struct MvStructureReport {
    double max_abs_m_plus_mbar = 0.0;  // Mbar + M over the triangle
    int at_i = 0, at_j = 0;            // location of the worst deviation
    double max_t_variation = 0.0;      // t-dependence of M and Mbar
    double tol = 0.0;
    bool pass = false;
};

// Checks Mbar = -M and t-independence of M, Mbar on a portfolio-shaped
// solution.
MvStructureReport mv_structure_check(const FlowSolution& flow,
                                     double tol = 1e-12);

// Scalar regulator with constant dynamics dX = (aX + bu)ds + sigma dW
// + c dJ and discounted quadratic tracking cost. mu1_sign sets the sign of
// the terminal cross weight mu1(t) = mu1_sign * h(t): +1 reproduces the
// reduced integral system the closed forms solve, -1 is the direct
// expansion of the tracking cost (used by the inconsistency demo).
struct RegulatorParams {
    TimeGrid grid;
    double a = 0.0, b = 1.0, sigma = 0.0, c = 0.0;
    double jump_intensity = 0.0;
    std::vector<double> h;  // discount samples, h[0] = 1, h >= 0
    int mu1_sign = +1;
    double picard_beta = 10.0;
    double picard_tol = 1e-12;
    int picard_max_iter = 200;
    double x0 = 1.0;
};

ProblemSpec to_problem_spec(const RegulatorParams& params);

struct RegulatorResult {
    FlowSolution flow;
    FeedbackLaw law;
    std::vector<double> picard_trace;        // beta-weighted update norms
    std::vector<double> contraction_ratios;  // successive norm ratios
    double contraction_bound = 0.0;          // K b^2 (1 - e^{-beta T}) / beta
};

// Upsilon(t,s) = mu1_sign h(t) e^{a(T-s)}, Mbar = 0, phi = 0, and M from
// the diagonal fixed point M(t,s) = h(t) exp(int_s^T (2a - b^2 (M(r,r) +
// Upsilon(r,r))) dr) solved by Picard iteration in the beta-weighted norm.
RegulatorResult regulator_solution(const RegulatorParams& params);

// The quadratic-tracking counterexample: precommitted solution from the
// initial pair (t_index, x).
struct CounterexampleParams {
    TimeGrid grid;
    double b = 1.0, sigma = 1.0;
    std::vector<double> h;
    int t_index = 0;
    double x = 0.0;
};

struct PrecommittedResult {
    std::vector<double> M_t;      // M^t(s_j) for j >= t_index, else 0
    FeedbackLaw precommitted;     // u(s, X) = -b M^t(s) (X - x)
    RegulatorResult companion;    // equilibrium of the same cost (a = c = 0)
    ProblemSpec problem;          // the underlying problem spec
};

PrecommittedResult counterexample_precommitted(const CounterexampleParams& params);

} // namespace tilq

#endif

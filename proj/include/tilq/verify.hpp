#ifndef TILQ_VERIFY_HPP
#define TILQ_VERIFY_HPP

#include <optional>
#include <string>

#include "tilq/analytic.hpp"
#include "tilq/flow.hpp"
#include "tilq/simulate.hpp"

namespace tilq {

struct SpikeReport {
    int t_index = 0;
    double t = 0.0;
    double step = 0.0;                 // grid step h
    Eigen::VectorXd v;
    Eigen::VectorXd xi;
    std::vector<int> eps_steps;        // multiples of the grid step
    std::vector<double> dj_over_eps;   // paired estimate per epsilon
    std::vector<double> dj_stderr;
    double extrapolated = 0.0;         // Richardson limit from the two smallest
    double extrapolated_stderr = 0.0;
    double slack = 1e-3;               // absorbs the O(h)+O(eps) window bias
    bool equilibrium_consistent = false;
    long paths = 0;
    std::uint64_t seed = 0;
};

// Paired common-random-number spike test of the limit criterion: perturbs
// the control by +v on [t, t+eps) and reports dJ/eps per ladder entry plus
// the extrapolated eps -> 0 value. The start state is deterministic: the
// given xi, or the control's mean path at t_index.
SpikeReport spike_test(const ProblemSpec& spec, const Control& control,
                       int t_index, const Eigen::VectorXd& v,
                       const std::vector<int>& eps_steps, long paths,
                       std::uint64_t seed,
                       std::optional<Eigen::VectorXd> xi = std::nullopt,
                       double slack = 1e-3);

// Residual of the pointwise first-order condition along a state trajectory:
// the adjoint diagonal is reconstructed from the flow fields, the control
// comes from the law, and the norm of
//   R(t,t) u - B^T p - sum_j D_j^T q_j - sum_k F_k^T r_k theta_k
// is returned per node.
std::vector<double> first_order_condition(
    const ProblemSpec& spec, const FlowSolution& flow, const FeedbackLaw& law,
    const std::vector<Eigen::VectorXd>& states);

struct SecondOrderReport {
    std::vector<double> min_eig;  // per node
    bool pass = false;
    double tol = -1e-8;
};

// Min eigenvalue of R(t,t) - sum_j D_j^T P(t;t) D_j - sum_k F_k^T P(t;t) F_k
// theta_k per node; pass iff all >= -1e-8.
SecondOrderReport second_order_condition(const ProblemSpec& spec,
                                         const SecondOrderField& P);

struct VariationOrderReport {
    std::vector<int> eps_steps;
    std::vector<double> e_sup_y2, e_sup_z2;
    std::vector<double> stderr_y2, stderr_z2;
    double slope_y = 0.0, slope_z = 0.0;
    bool y_skipped = false, z_skipped = false;
    std::string note;
    double max_y_mean_over_stderr = 0.0;
    bool y_mean_ok = true;
};

// Simulates the first and second variational processes directly (they are
// linear SDEs sourced by the spike window) and regresses the log sup-square
// moments on log eps. Expected slopes: ~1 for y, ~2 for z.
VariationOrderReport variation_order_test(const ProblemSpec& spec, int t_index,
                                          const Eigen::VectorXd& v,
                                          const std::vector<int>& eps_steps,
                                          long paths, std::uint64_t seed);

struct InconsistencyReport {
    std::vector<double> M_t;           // precommitted kernel per node
    int r_index = 0;
    double margin_mean_abs = 0.0;      // ensemble mean |precommitted u(r)|
    double margin_stderr = 0.0;
    double resolved_at_r = 0.0;        // re-solved control at r (exactly 0)
    bool contradiction = false;        // margin exceeds 5 x stderr
    double adversarial_v = 0.0;        // direction opposing the residual
    SpikeReport precommitted_spike;    // should fail at r
    SpikeReport companion_spike;       // equilibrium law, should pass at r
    std::vector<double> companion_gain;  // law gain per node
};

// Demonstrates the time inconsistency of the precommitted solution: the
// restriction to a later node keeps acting on the stale initial pair, while
// the re-solved problem's control at that node is zero. The companion
// equilibrium law of the same cost is spike-tested alongside.
InconsistencyReport inconsistency_demo(const CounterexampleParams& params,
                                       int r_index, long paths,
                                       std::uint64_t seed,
                                       const std::vector<int>& eps_steps = {});

} // namespace tilq

#endif

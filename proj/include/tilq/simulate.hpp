#ifndef TILQ_SIMULATE_HPP
#define TILQ_SIMULATE_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "tilq/flow.hpp"
#include "tilq/problem.hpp"

namespace tilq {

// Explicit per-node control samples.
struct ControlTable {
    TimeGrid grid;
    std::vector<Eigen::VectorXd> u;  // m per node
};

// Spike perturbation: add v on the node window [begin, end).
struct SpikeWindow {
    int begin = 0;
    int end = 0;
    Eigen::VectorXd v;
};

// A control is either a feedback law or an explicit table, optionally
// overlaid with a spike window.
struct Control {
    const FeedbackLaw* law = nullptr;
    const ControlTable* table = nullptr;
    const SpikeWindow* spike = nullptr;

    Eigen::VectorXd at(int node, const Eigen::VectorXd& x) const {
        Eigen::VectorXd u = law ? law->control(node, x) : table->u[node];
        if (spike && node >= spike->begin && node < spike->end) u += spike->v;
        return u;
    }
};

struct JumpEvent {
    long path;
    int node;
    int mark;
    int count;
};

// Simulated state trajectories from node t_start to the horizon, one slice
// of n doubles per node per path.
struct PathEnsemble {
    TimeGrid grid;
    int t_start = 0;
    Eigen::VectorXd xi;
    int n = 1;
    long paths = 0;
    std::uint64_t seed = 0;
    std::vector<double> states;  // [(p * nodes + (i - t_start)) * n + q]
    std::vector<JumpEvent> jump_events;

    int nodes() const { return grid.size() - t_start; }
    const double* state(long p, int node_abs) const {
        return states.data() +
               (static_cast<std::size_t>(p) * nodes() + (node_abs - t_start)) * n;
    }
    Eigen::Map<const Eigen::VectorXd> state_vec(long p, int node_abs) const {
        return {state(p, node_abs), n};
    }
};

struct CostBreakdown {
    double running_q = 0.0;
    double running_qbar = 0.0;
    double running_r = 0.0;
    double terminal_linear = 0.0;
    double terminal_g = 0.0;
    double terminal_gbar = 0.0;
    double sum() const {
        return running_q + running_qbar + running_r + terminal_linear +
               terminal_g + terminal_gbar;
    }
};

struct CostEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    long paths = 0;
    CostBreakdown parts;
};

// Euler-Maruyama with compensated Poisson jumps on the grid; controls are
// evaluated at the left endpoint of each step. Per-path streams derive from
// (seed, path index), so the result is independent of scheduling.
PathEnsemble simulate(const ProblemSpec& spec, const Control& control,
                      int t_start, const Eigen::VectorXd& xi, long paths,
                      std::uint64_t seed);

// Two-pass cost evaluation of the time-t_start cost over the ensemble; xi
// must be deterministic so the conditional expectation is a plain mean.
// The mean-quadratic terms use the ensemble mean with a delta-method
// correction folded into the standard error.
CostEstimate estimate_cost(const ProblemSpec& spec, const Control& control,
                           int t_start, const Eigen::VectorXd& xi,
                           const PathEnsemble& ensemble);

// Deterministic mean trajectory under the control (noise averages out of the
// state equation); nodes t_start..N.
std::vector<Eigen::VectorXd> mean_state_path(const ProblemSpec& spec,
                                             const Control& control,
                                             int t_start,
                                             const Eigen::VectorXd& xi);

} // namespace tilq

#endif

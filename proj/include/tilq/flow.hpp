#ifndef TILQ_FLOW_HPP
#define TILQ_FLOW_HPP

#include <Eigen/Dense>
#include <vector>

#include "tilq/problem.hpp"
#include "tilq/triangular.hpp"

namespace tilq {

// Feedback gains per node; the control is u(t_i, x) = -Psi[i] x - psi[i].
struct FeedbackLaw {
    TimeGrid grid;
    std::vector<Eigen::MatrixXd> Psi;  // m x n
    std::vector<Eigen::VectorXd> psi;  // m

    Eigen::VectorXd control(int i, const Eigen::VectorXd& x) const {
        return -Psi[i] * x - psi[i];
    }
};

struct FlowDiagnostics {
    std::vector<double> theta_cond;    // cond of the gain weight per node
    std::vector<int> corrector_iters;  // marching corrector count per node
    std::vector<double> picard_trace;  // update norms (Picard solver only)
    bool experimental = false;         // n > 1
};

// The quadruple solving the flow system; terminal rows carry the cost data
// M(t,T)=G(t), Mbar(t,T)=Gbar(t), Upsilon(t,T)=mu1(t), phi(t,T)=mu2(t).
struct FlowSolution {
    TriangularField M;        // n x n
    TriangularField Mbar;     // n x n
    TriangularField Upsilon;  // n x n
    TriangularField phi;      // n x 1
    FlowDiagnostics diagnostics;
};

struct FlowResult {
    FlowSolution flow;
    FeedbackLaw law;
};

struct PicardResult {
    FlowSolution flow;
    FeedbackLaw law;
    std::vector<double> trace;  // beta-weighted update norm per iteration
};

struct ThetaResult {
    Eigen::MatrixXd theta;  // inverse gain weight, m x m
    double cond = 0.0;
};

// Options shared by both flow solvers.
struct FlowOptions {
    double corrector_tol = 1e-12;  // relative diagonal change
    int corrector_max_iter = 20;
    double theta_cond_limit = 1e10;
};

// Inverse of S = R(t,t) + sum_j D_j^T M D_j + sum_k F_k^T M F_k theta_k for
// the candidate diagonal M(t,t); fails the gate when cond(S) exceeds the
// configured limit.
ThetaResult theta_matrix(const ProblemSpec& spec, int t_index,
                         const Eigen::MatrixXd& M_diag,
                         double cond_limit = 1e10);

// Second-order adjoint field P(s_j; t_i) on the triangle: row-wise backward
// RK4 of dP/ds = -(A^T P + P A + sum C^T P C + sum E^T P E theta - Q(t_i,s))
// from P(T; t_i) = -G(t_i); symmetrized each step.
struct SecondOrderField {
    TriangularField P;  // n x n
};

SecondOrderField solve_second_order(const ProblemSpec& spec);

// Diagonal-first backward marching: the diagonal at each node is pinned by a
// predictor/corrector pass, then the whole row is filled.
FlowResult solve_flow_marching(const ProblemSpec& spec,
                               const FlowOptions& opts = {});

// Global fixed-point iteration on the diagonal trajectory, measured in the
// beta-weighted sup norm sup_s |e^{-beta(T-s)} f(s)|.
PicardResult solve_flow_picard(const ProblemSpec& spec, double beta,
                               double tol, int max_iter,
                               const FlowOptions& opts = {});

// Per-node gain-consistency residual: rebuilds the gains from the flow
// fields and returns ||Psi_law - Psi_derived||_F + ||psi_law - psi_derived||
// at every node.
std::vector<double> feedback_residual(const ProblemSpec& spec,
                                      const FlowSolution& flow,
                                      const FeedbackLaw& law);

} // namespace tilq

#endif

#ifndef TILQ_PROBLEM_HPP
#define TILQ_PROBLEM_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "tilq/grid.hpp"
#include "tilq/triangular.hpp"

namespace tilq {

// Finite mark/intensity discretization of the jump measure. Integrals over
// the mark space are evaluated as sums over the marks everywhere in the
// library; K = 0 is a pure-diffusion model.
struct JumpMeasure {
    std::vector<Eigen::VectorXd> marks;
    std::vector<double> intensities;

    int count() const { return static_cast<int>(marks.size()); }
    double total_intensity() const {
        double s = 0.0;
        for (double v : intensities) s += v;
        return s;
    }
};

// State-equation coefficients sampled per grid node. Diffusion tables are
// indexed [driver][node], jump tables [mark][node].
struct CoefficientSet {
    std::vector<Eigen::MatrixXd> A;                 // n x n
    std::vector<Eigen::MatrixXd> B;                 // n x m
    std::vector<Eigen::VectorXd> b;                 // n
    std::vector<std::vector<Eigen::MatrixXd>> C;    // [d][node] n x n
    std::vector<std::vector<Eigen::MatrixXd>> D;    // [d][node] n x m
    std::vector<std::vector<Eigen::VectorXd>> sigma;// [d][node] n
    std::vector<std::vector<Eigen::MatrixXd>> E;    // [K][node] n x n
    std::vector<std::vector<Eigen::MatrixXd>> F;    // [K][node] n x m
    std::vector<std::vector<Eigen::VectorXd>> c;    // [K][node] n
};

// Cost weights. Two-argument weights live on the grid triangle s >= t and
// are symmetrized on ingest; node-indexed weights are per grid node.
struct CostSet {
    TriangularField Q;     // n x n
    TriangularField Qbar;  // n x n
    TriangularField R;     // m x m
    std::vector<Eigen::MatrixXd> G;     // n x n
    std::vector<Eigen::MatrixXd> Gbar;  // n x n
    std::vector<Eigen::MatrixXd> mu1;   // n x n
    std::vector<Eigen::VectorXd> mu2;   // n
};

struct ProblemSpec {
    int n = 1;
    int m = 1;
    int d = 1;
    TimeGrid grid;
    JumpMeasure jumps;
    CoefficientSet coeffs;
    CostSet costs;
    Eigen::VectorXd x0;

    // Throws ConfigError if any table shape or length is inconsistent.
    void validate() const;
};

struct ValidationReport {
    std::vector<double> min_eig_R_diag;  // lambda_min of R(t_i, t_i)
    std::vector<double> min_eig_G;       // lambda_min of G(t_i)
    std::vector<double> min_eig_Q_row;   // min over s >= t_i of lambda_min Q(t_i, s)
    bool h2_ok = false;
    std::vector<std::string> h1_warnings;
    bool h1_ok = false;
};

// Positivity report for the standing assumptions: H2 requires
// R(t,t) >= 0, G(t) >= 0, Q(t,s) >= 0 (to -1e-10); the continuity part of
// H1 is checked heuristically from adjacent-sample jumps (warn only).
ValidationReport check_h1_h2(const ProblemSpec& spec);

struct EllipticityReport {
    std::vector<double> rho;  // per node
    double floor = 0.0;
    bool pass = false;
};

// rho(t) = beta(t)^2 + sum_k gamma(t, z_k)^2 theta_k for the scalar
// portfolio shape (beta = D, gamma_k = F_k). Requires n = m = d = 1.
EllipticityReport ellipticity_check(const ProblemSpec& spec, double delta);

Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& a);

} // namespace tilq

#endif

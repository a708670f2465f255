#include "tilq/problem.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

namespace tilq {

Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& a) {
    return 0.5 * (a + a.transpose());
}

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

void check_node_table(const std::vector<Eigen::MatrixXd>& tab, int np, int r,
                      int c, const std::string& name) {
    require(static_cast<int>(tab.size()) == np,
            name + ": expected " + std::to_string(np) + " samples");
    for (const auto& v : tab) {
        require(v.rows() == r && v.cols() == c, name + ": wrong shape");
        require(v.allFinite(), name + ": non-finite sample");
    }
}

void check_node_table(const std::vector<Eigen::VectorXd>& tab, int np, int r,
                      const std::string& name) {
    require(static_cast<int>(tab.size()) == np,
            name + ": expected " + std::to_string(np) + " samples");
    for (const auto& v : tab) {
        require(v.size() == r, name + ": wrong shape");
        require(v.allFinite(), name + ": non-finite sample");
    }
}

void check_triangle(const TriangularField& f, const TimeGrid& grid, int r,
                    int c, const std::string& name) {
    require(f.grid() == grid, name + ": grid mismatch");
    require(f.rows() == r && f.cols() == c, name + ": wrong shape");
    for (double v : f.raw())
        require(std::isfinite(v), name + ": non-finite sample");
}

double min_eigenvalue(const Eigen::MatrixXd& a) {
    if (a.rows() == 1) return a(0, 0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(a));
    return es.eigenvalues().minCoeff();
}

// Largest adjacent-sample jump relative to the table sup norm.
template <class Tab>
double jump_ratio(const Tab& tab) {
    double sup = 0.0, jump = 0.0;
    for (std::size_t i = 0; i < tab.size(); ++i) {
        sup = std::max(sup, tab[i].template lpNorm<Eigen::Infinity>());
        if (i + 1 < tab.size())
            jump = std::max(jump, (tab[i + 1] - tab[i])
                                      .template lpNorm<Eigen::Infinity>());
    }
    return sup > 0.0 ? jump / sup : 0.0;
}

double triangle_jump_ratio(const TriangularField& f) {
    const int np = f.grid().size();
    double sup = 0.0, jump = 0.0;
    for (int i = 0; i < np; ++i)
        for (int j = i; j < np; ++j) {
            sup = std::max(sup, f.mat(i, j).lpNorm<Eigen::Infinity>());
            if (j + 1 < np)
                jump = std::max(
                    jump, (f.mat(i, j + 1) - f.mat(i, j)).lpNorm<Eigen::Infinity>());
        }
    return sup > 0.0 ? jump / sup : 0.0;
}

} // namespace

void ProblemSpec::validate() const {
    require(n >= 1, "dims.n: must be >= 1");
    require(m >= 1, "dims.m: must be >= 1");
    require(d >= 0, "dims.d: must be >= 0");
    const int np = grid.size();

    const int K = jumps.count();
    require(static_cast<int>(jumps.intensities.size()) == K,
            "jumps: marks/intensities length mismatch");
    for (int k = 0; k < K; ++k) {
        require(jumps.intensities[k] >= 0.0,
                "jumps.intensities[" + std::to_string(k) + "]: negative intensity");
        require(std::isfinite(jumps.intensities[k]),
                "jumps.intensities[" + std::to_string(k) + "]: non-finite");
        require(jumps.marks[k].size() > 0 && jumps.marks[k].norm() > 0.0,
                "jumps.marks[" + std::to_string(k) + "]: zero mark");
    }

    check_node_table(coeffs.A, np, n, n, "coeff.A");
    check_node_table(coeffs.B, np, n, m, "coeff.B");
    check_node_table(coeffs.b, np, n, "coeff.b");
    require(static_cast<int>(coeffs.C.size()) == d, "coeff.C: expected d drivers");
    require(static_cast<int>(coeffs.D.size()) == d, "coeff.D: expected d drivers");
    require(static_cast<int>(coeffs.sigma.size()) == d,
            "coeff.sigma: expected d drivers");
    for (int j = 0; j < d; ++j) {
        const std::string sj = "[" + std::to_string(j) + "]";
        check_node_table(coeffs.C[j], np, n, n, "coeff.C" + sj);
        check_node_table(coeffs.D[j], np, n, m, "coeff.D" + sj);
        check_node_table(coeffs.sigma[j], np, n, "coeff.sigma" + sj);
    }
    require(static_cast<int>(coeffs.E.size()) == K, "coeff.E: expected K marks");
    require(static_cast<int>(coeffs.F.size()) == K, "coeff.F: expected K marks");
    require(static_cast<int>(coeffs.c.size()) == K, "coeff.c: expected K marks");
    for (int k = 0; k < K; ++k) {
        const std::string sk = "[" + std::to_string(k) + "]";
        check_node_table(coeffs.E[k], np, n, n, "coeff.E" + sk);
        check_node_table(coeffs.F[k], np, n, m, "coeff.F" + sk);
        check_node_table(coeffs.c[k], np, n, "coeff.c" + sk);
    }

    check_triangle(costs.Q, grid, n, n, "cost.Q");
    check_triangle(costs.Qbar, grid, n, n, "cost.Qbar");
    check_triangle(costs.R, grid, m, m, "cost.R");
    check_node_table(costs.G, np, n, n, "cost.G");
    check_node_table(costs.Gbar, np, n, n, "cost.Gbar");
    check_node_table(costs.mu1, np, n, n, "cost.mu1");
    check_node_table(costs.mu2, np, n, "cost.mu2");

    require(x0.size() == n, "x0: wrong length");
    require(x0.allFinite(), "x0: non-finite");
}

ValidationReport check_h1_h2(const ProblemSpec& spec) {
    spec.validate();
    const int np = spec.grid.size();
    ValidationReport rep;
    rep.min_eig_R_diag.resize(np);
    rep.min_eig_G.resize(np);
    rep.min_eig_Q_row.resize(np);

    const double tol = -1e-10;
    rep.h2_ok = true;
    for (int i = 0; i < np; ++i) {
        rep.min_eig_R_diag[i] = min_eigenvalue(spec.costs.R.mat(i, i));
        rep.min_eig_G[i] = min_eigenvalue(spec.costs.G[i]);
        double qmin = 0.0;
        for (int j = i; j < np; ++j)
            qmin = std::min(j == i ? min_eigenvalue(spec.costs.Q.mat(i, j)) : qmin,
                            min_eigenvalue(spec.costs.Q.mat(i, j)));
        rep.min_eig_Q_row[i] = qmin;
        if (rep.min_eig_R_diag[i] < tol || rep.min_eig_G[i] < tol || qmin < tol)
            rep.h2_ok = false;
    }

    auto warn = [&](double ratio, const std::string& name) {
        if (ratio >= 0.5)
            rep.h1_warnings.push_back(name + ": adjacent-sample jump ratio " +
                                      std::to_string(ratio));
    };
    warn(jump_ratio(spec.coeffs.A), "coeff.A");
    warn(jump_ratio(spec.coeffs.B), "coeff.B");
    warn(jump_ratio(spec.coeffs.b), "coeff.b");
    for (int j = 0; j < spec.d; ++j) {
        const std::string sj = "[" + std::to_string(j) + "]";
        warn(jump_ratio(spec.coeffs.C[j]), "coeff.C" + sj);
        warn(jump_ratio(spec.coeffs.D[j]), "coeff.D" + sj);
        warn(jump_ratio(spec.coeffs.sigma[j]), "coeff.sigma" + sj);
    }
    for (int k = 0; k < spec.jumps.count(); ++k) {
        const std::string sk = "[" + std::to_string(k) + "]";
        warn(jump_ratio(spec.coeffs.E[k]), "coeff.E" + sk);
        warn(jump_ratio(spec.coeffs.F[k]), "coeff.F" + sk);
        warn(jump_ratio(spec.coeffs.c[k]), "coeff.c" + sk);
    }
    warn(triangle_jump_ratio(spec.costs.Q), "cost.Q");
    warn(triangle_jump_ratio(spec.costs.Qbar), "cost.Qbar");
    warn(triangle_jump_ratio(spec.costs.R), "cost.R");
    warn(jump_ratio(spec.costs.G), "cost.G");
    warn(jump_ratio(spec.costs.Gbar), "cost.Gbar");
    warn(jump_ratio(spec.costs.mu1), "cost.mu1");
    warn(jump_ratio(spec.costs.mu2), "cost.mu2");
    rep.h1_ok = rep.h1_warnings.empty();
    return rep;
}

EllipticityReport ellipticity_check(const ProblemSpec& spec, double delta) {
    if (spec.n != 1 || spec.m != 1 || spec.d != 1)
        throw ConfigError("ellipticity_check: requires a scalar (n=m=d=1) model");
    if (!(delta > 0.0))
        throw ConfigError("ellipticity_check: delta must be positive");
    const int np = spec.grid.size();
    EllipticityReport rep;
    rep.floor = delta;
    rep.rho.resize(np);
    rep.pass = true;
    for (int i = 0; i < np; ++i) {
        double rho = spec.coeffs.D[0][i](0, 0) * spec.coeffs.D[0][i](0, 0);
        for (int k = 0; k < spec.jumps.count(); ++k) {
            const double g = spec.coeffs.F[k][i](0, 0);
            rho += g * g * spec.jumps.intensities[k];
        }
        rep.rho[i] = rho;
        if (rho < delta) rep.pass = false;
    }
    return rep;
}

} // namespace tilq

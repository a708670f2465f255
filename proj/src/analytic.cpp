#include "tilq/analytic.hpp"

#include <cmath>
#include <limits>

#include "tilq/quadrature.hpp"

namespace tilq {

namespace {

Eigen::MatrixXd s1(double v) {
    Eigen::MatrixXd m(1, 1);
    m(0, 0) = v;
    return m;
}

Eigen::VectorXd v1(double v) {
    Eigen::VectorXd x(1);
    x[0] = v;
    return x;
}

std::vector<Eigen::MatrixXd> scalar_table(const std::vector<double>& vals) {
    std::vector<Eigen::MatrixXd> out;
    out.reserve(vals.size());
    for (double v : vals) out.push_back(s1(v));
    return out;
}

void fill_constant_triangle(TriangularField& f, double v) {
    for (double& x : f.raw()) x = v;
}

void check_discount(const std::vector<double>& h, int np) {
    if (static_cast<int>(h.size()) != np)
        throw ConfigError("regulator: discount table has wrong length");
    if (std::abs(h[0] - 1.0) > 1e-12)
        throw ConfigError("regulator: discount must satisfy h(0) = 1");
    for (double v : h) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw ConfigError("regulator: discount must be finite and >= 0");
    }
}

// Scalar tracking-cost spec shared by the regulator and the counterexample:
// dX = (aX + bu) ds + sigma dW + c dJ, R = 1, G = h, mu1 = mu1_sign * h.
ProblemSpec tracking_spec(const TimeGrid& grid, double a, double b,
                          double sigma, double c, double lambda,
                          const std::vector<double>& h, int mu1_sign,
                          double x0) {
    const int np = grid.size();
    ProblemSpec spec;
    spec.n = spec.m = spec.d = 1;
    spec.grid = grid;
    if (lambda > 0.0) {
        spec.jumps.marks.push_back(v1(1.0));
        spec.jumps.intensities.push_back(lambda);
    }
    const int K = spec.jumps.count();

    std::vector<double> zero(np, 0.0);
    spec.coeffs.A = scalar_table(std::vector<double>(np, a));
    spec.coeffs.B = scalar_table(std::vector<double>(np, b));
    spec.coeffs.b.assign(np, v1(0.0));
    spec.coeffs.C.push_back(scalar_table(zero));
    spec.coeffs.D.push_back(scalar_table(zero));
    spec.coeffs.sigma.push_back(std::vector<Eigen::VectorXd>(np, v1(sigma)));
    for (int k = 0; k < K; ++k) {
        spec.coeffs.E.push_back(scalar_table(zero));
        spec.coeffs.F.push_back(scalar_table(zero));
        spec.coeffs.c.push_back(std::vector<Eigen::VectorXd>(np, v1(c)));
    }

    spec.costs.Q = TriangularField(grid, 1, 1);
    spec.costs.Qbar = TriangularField(grid, 1, 1);
    spec.costs.R = TriangularField(grid, 1, 1);
    fill_constant_triangle(spec.costs.R, 1.0);
    spec.costs.G = scalar_table(h);
    spec.costs.Gbar.assign(np, s1(0.0));
    std::vector<double> m1(np);
    for (int i = 0; i < np; ++i) m1[i] = mu1_sign * h[i];
    spec.costs.mu1 = scalar_table(m1);
    spec.costs.mu2.assign(np, v1(0.0));
    spec.x0 = v1(x0);
    spec.validate();
    return spec;
}

struct PicardCore {
    std::vector<double> m;  // converged diagonal
    std::vector<double> trace;
    std::vector<double> ratios;
    double bound = 0.0;
};

// Fixed point of m(s) = h(s) exp(int_s^T (2a - b^2 (m + updiag)) dr) in the
// beta-weighted sup norm, initial guess m <- h.
PicardCore regulator_picard(const TimeGrid& grid, double a, double b,
                            const std::vector<double>& h,
                            const std::vector<double>& updiag, double beta,
                            double tol, int max_iter) {
    const int np = grid.size();
    const double step = grid.step();
    const double T = grid.horizon();
    if (!(beta > 0.0) || !(tol > 0.0) || max_iter < 1)
        throw ConfigError("regulator: invalid Picard controls");

    PicardCore out;
    {
        std::vector<double> g(np);
        for (int i = 0; i < np; ++i) g[i] = 2.0 * a - b * b * updiag[i];
        const auto cum = cumulative_tail_integral(g, step);
        double hmax = 0.0, emax = 0.0;
        for (int i = 0; i < np; ++i) {
            hmax = std::max(hmax, h[i]);
            emax = std::max(emax, std::exp(cum[i]));
        }
        out.bound =
            hmax * emax * b * b * (1.0 - std::exp(-beta * T)) / beta;
    }

    auto weight = [&](int i) { return std::exp(-beta * (T - grid.node(i))); };

    std::vector<double> m = h, mnew(np), g(np), cum;
    bool reached = false;
    double prev = std::numeric_limits<double>::infinity();
    int polish = 0;
    for (int iter = 0; iter < max_iter; ++iter) {
        for (int i = 0; i < np; ++i)
            g[i] = 2.0 * a - b * b * (m[i] + updiag[i]);
        cum = cumulative_tail_integral(g, step);
        double norm = 0.0;
        for (int i = 0; i < np; ++i) {
            mnew[i] = h[i] * std::exp(cum[i]);
            norm = std::max(norm, weight(i) * std::abs(mnew[i] - m[i]));
        }
        if (reached && (!(norm < 0.5 * prev) || ++polish > 5)) break;
        if (!out.trace.empty() && out.trace.back() > 0.0)
            out.ratios.push_back(norm / out.trace.back());
        out.trace.push_back(norm);
        m.swap(mnew);
        if (!reached && norm < tol) {
            reached = true;
            if (norm == 0.0) break;
        }
        prev = norm;
    }
    if (!reached) {
        const double last_ratio = out.ratios.empty() ? 0.0 : out.ratios.back();
        throw SolverError(
            "regulator: Picard failed to converge; last contraction ratio " +
            std::to_string(last_ratio) + " vs bound " +
            std::to_string(out.bound));
    }
    out.m = std::move(m);
    return out;
}

// Triangular fields and gains from a converged tracking diagonal.
RegulatorResult tracking_fields(const TimeGrid& grid, double a, double b,
                                const std::vector<double>& h, int mu1_sign,
                                const std::vector<double>& updiag,
                                PicardCore&& core) {
    const int np = grid.size();
    const double step = grid.step();
    const double T = grid.horizon();
    std::vector<double> g(np);
    for (int i = 0; i < np; ++i)
        g[i] = 2.0 * a - b * b * (core.m[i] + updiag[i]);
    const auto cum = cumulative_tail_integral(g, step);

    RegulatorResult out{
        {TriangularField(grid, 1, 1), TriangularField(grid, 1, 1),
         TriangularField(grid, 1, 1), TriangularField(grid, 1, 1),
         {}},
        {},
        core.trace,
        core.ratios,
        core.bound};
    for (int i = 0; i < np; ++i)
        for (int j = i; j < np; ++j) {
            out.flow.M.at(i, j)[0] = h[i] * std::exp(cum[j]);
            out.flow.Upsilon.at(i, j)[0] =
                mu1_sign * h[i] * std::exp(a * (T - grid.node(j)));
        }
    out.flow.diagnostics.theta_cond.assign(np, 1.0);
    out.flow.diagnostics.corrector_iters.assign(np, 0);
    out.flow.diagnostics.picard_trace = core.trace;

    out.law.grid = grid;
    out.law.Psi.resize(np);
    out.law.psi.resize(np);
    for (int i = 0; i < np; ++i) {
        const double mdiag = out.flow.M.at(i, i)[0];
        out.law.Psi[i] = s1(b * (mdiag + updiag[i]));
        out.law.psi[i] = v1(0.0);
    }
    return out;
}

} // namespace

std::vector<double> sampled(const TimeGrid& grid,
                            const std::function<double(double)>& fn) {
    std::vector<double> out(grid.size());
    for (int i = 0; i < grid.size(); ++i) out[i] = fn(grid.node(i));
    return out;
}

ProblemSpec to_problem_spec(const MeanVarianceParams& p) {
    const int np = p.grid.size();
    const int K = static_cast<int>(p.gamma.size());
    if (static_cast<int>(p.intensities.size()) != K)
        throw ConfigError("mean_variance: gamma/intensities length mismatch");

    ProblemSpec spec;
    spec.n = spec.m = spec.d = 1;
    spec.grid = p.grid;
    for (int k = 0; k < K; ++k) {
        spec.jumps.marks.push_back(v1(1.0 + k));
        spec.jumps.intensities.push_back(p.intensities[k]);
    }

    std::vector<double> excess(np), zero(np, 0.0);
    for (int i = 0; i < np; ++i) excess[i] = p.alpha[i] - p.r[i];
    spec.coeffs.A = scalar_table(p.r);
    spec.coeffs.B = scalar_table(excess);
    spec.coeffs.b.assign(np, v1(0.0));
    spec.coeffs.C.push_back(scalar_table(zero));
    spec.coeffs.D.push_back(scalar_table(p.beta));
    spec.coeffs.sigma.push_back(std::vector<Eigen::VectorXd>(np, v1(0.0)));
    for (int k = 0; k < K; ++k) {
        spec.coeffs.E.push_back(scalar_table(zero));
        spec.coeffs.F.push_back(scalar_table(p.gamma[k]));
        spec.coeffs.c.push_back(std::vector<Eigen::VectorXd>(np, v1(0.0)));
    }

    spec.costs.Q = TriangularField(p.grid, 1, 1);
    spec.costs.Qbar = TriangularField(p.grid, 1, 1);
    spec.costs.R = TriangularField(p.grid, 1, 1);
    spec.costs.G.assign(np, s1(1.0));
    spec.costs.Gbar.assign(np, s1(-1.0));
    std::vector<double> m1(np), m2(np);
    for (int i = 0; i < np; ++i) {
        m1[i] = -p.mu1[i];
        m2[i] = -p.mu2[i];
    }
    spec.costs.mu1 = scalar_table(m1);
    spec.costs.mu2.resize(np);
    for (int i = 0; i < np; ++i) spec.costs.mu2[i] = v1(m2[i]);
    spec.x0 = v1(p.x0);
    spec.validate();
    return spec;
}

FlowResult mean_variance_solution(const MeanVarianceParams& p) {
    const int np = p.grid.size();
    const double h = p.grid.step();
    const int K = static_cast<int>(p.gamma.size());

    std::vector<double> rho(np);
    for (int i = 0; i < np; ++i) {
        double v = p.beta[i] * p.beta[i];
        for (int k = 0; k < K; ++k)
            v += p.gamma[k][i] * p.gamma[k][i] * p.intensities[k];
        rho[i] = v;
    }
    double rho_min = rho[0];
    for (double v : rho) rho_min = std::min(rho_min, v);
    if (rho_min < p.ellipticity_floor)
        throw SolverError("mean_variance: ellipticity failure, min rho = " +
                          std::to_string(rho_min));

    // tail integrals of the rate and of the weighted squared market price
    std::vector<double> rint(np);
    for (int i = 0; i < np; ++i)
        rint[i] = integral_tail_simpson(p.r.data() + i, np - i, h);
    std::vector<double> f(np);
    for (int i = 0; i < np; ++i) {
        const double k = (p.alpha[i] - p.r[i]) * (p.alpha[i] - p.r[i]) / rho[i];
        f[i] = std::exp(-rint[i]) * p.mu1[i] * k;
    }
    std::vector<double> iacc(np);
    for (int i = 0; i < np; ++i)
        iacc[i] = integral_tail_simpson(f.data() + i, np - i, h);

    std::vector<double> M(np), dfac(np);
    for (int i = 0; i < np; ++i) {
        M[i] = std::exp(2.0 * rint[i]) * (1.0 + iacc[i]);
        dfac[i] = std::exp(rint[i]);
    }

    FlowResult out{
        {TriangularField(p.grid, 1, 1), TriangularField(p.grid, 1, 1),
         TriangularField(p.grid, 1, 1), TriangularField(p.grid, 1, 1),
         {}},
        {}};
    for (int i = 0; i < np; ++i)
        for (int j = i; j < np; ++j) {
            out.flow.M.at(i, j)[0] = M[j];
            out.flow.Mbar.at(i, j)[0] = -M[j];
            out.flow.Upsilon.at(i, j)[0] = -p.mu1[i] * dfac[j];
            out.flow.phi.at(i, j)[0] = -p.mu2[i] * dfac[j];
        }
    out.flow.diagnostics.theta_cond.assign(np, 1.0);
    out.flow.diagnostics.corrector_iters.assign(np, 0);

    out.law.grid = p.grid;
    out.law.Psi.resize(np);
    out.law.psi.resize(np);
    for (int i = 0; i < np; ++i) {
        const double excess = p.alpha[i] - p.r[i];
        const double scale = excess / (M[i] * rho[i]);
        out.law.Psi[i] = s1(scale * out.flow.Upsilon.at(i, i)[0]);
        out.law.psi[i] = v1(scale * out.flow.phi.at(i, i)[0]);
    }
    return out;
}

MvStructureReport mv_structure_check(const FlowSolution& flow, double tol) {
    const int np = flow.M.grid().size();
    MvStructureReport rep;
    rep.tol = tol;
    for (int i = 0; i < np; ++i)
        for (int j = i; j < np; ++j) {
            const double dev =
                (flow.M.mat(i, j) + flow.Mbar.mat(i, j)).lpNorm<Eigen::Infinity>();
            if (dev > rep.max_abs_m_plus_mbar) {
                rep.max_abs_m_plus_mbar = dev;
                rep.at_i = i;
                rep.at_j = j;
            }
        }
    for (int j = 0; j < np; ++j)
        for (int i = 1; i <= j; ++i) {
            rep.max_t_variation = std::max(
                rep.max_t_variation,
                (flow.M.mat(i, j) - flow.M.mat(0, j)).lpNorm<Eigen::Infinity>());
            rep.max_t_variation = std::max(
                rep.max_t_variation,
                (flow.Mbar.mat(i, j) - flow.Mbar.mat(0, j)).lpNorm<Eigen::Infinity>());
        }
    rep.pass = rep.max_abs_m_plus_mbar <= tol && rep.max_t_variation <= tol;
    return rep;
}

ProblemSpec to_problem_spec(const RegulatorParams& p) {
    check_discount(p.h, p.grid.size());
    return tracking_spec(p.grid, p.a, p.b, p.sigma, p.c, p.jump_intensity, p.h,
                         p.mu1_sign, p.x0);
}

RegulatorResult regulator_solution(const RegulatorParams& p) {
    const int np = p.grid.size();
    const double T = p.grid.horizon();
    check_discount(p.h, np);

    std::vector<double> updiag(np);
    for (int i = 0; i < np; ++i)
        updiag[i] = p.mu1_sign * p.h[i] * std::exp(p.a * (T - p.grid.node(i)));

    PicardCore core =
        regulator_picard(p.grid, p.a, p.b, p.h, updiag, p.picard_beta,
                         p.picard_tol, p.picard_max_iter);
    return tracking_fields(p.grid, p.a, p.b, p.h, p.mu1_sign, updiag,
                           std::move(core));
}

PrecommittedResult counterexample_precommitted(const CounterexampleParams& p) {
    const int np = p.grid.size();
    // the precommitted solution only needs h(t) > 0; no h(0) = 1 constraint
    if (static_cast<int>(p.h.size()) != np)
        throw ConfigError("counterexample: discount table has wrong length");
    for (double v : p.h)
        if (!(v >= 0.0) || !std::isfinite(v))
            throw ConfigError("counterexample: discount must be finite and >= 0");
    if (p.t_index < 0 || p.t_index >= np - 1)
        throw ConfigError("counterexample: t_index out of range");
    const double T = p.grid.horizon();
    const double ht = p.h[p.t_index];
    if (!(ht > 0.0))
        throw ConfigError("counterexample: requires h(t) > 0");

    PrecommittedResult out;
    out.M_t.assign(np, 0.0);
    for (int j = p.t_index; j < np; ++j) {
        const double s = p.grid.node(j);
        out.M_t[j] = ht / (p.b * p.b * ht * (T - s) + 1.0);
    }

    out.precommitted.grid = p.grid;
    out.precommitted.Psi.resize(np);
    out.precommitted.psi.resize(np);
    for (int j = 0; j < np; ++j) {
        const double mt = out.M_t[j];
        out.precommitted.Psi[j] = s1(p.b * mt);
        out.precommitted.psi[j] = v1(-p.b * mt * p.x);
    }

    // companion equilibrium of the same cost (a = c = 0, direct terminal
    // cross weight mu1 = -h); its fixed point is M(t,s) = h(t) and the
    // Picard core lands on it from the standard initial guess
    std::vector<double> updiag(np);
    for (int i = 0; i < np; ++i) updiag[i] = -p.h[i];
    PicardCore core =
        regulator_picard(p.grid, 0.0, p.b, p.h, updiag, 10.0, 1e-13, 200);
    out.companion = tracking_fields(p.grid, 0.0, p.b, p.h, -1, updiag,
                                    std::move(core));
    out.problem = tracking_spec(p.grid, 0.0, p.b, p.sigma, 0.0, 0.0, p.h, -1,
                                p.x);
    return out;
}

} // namespace tilq

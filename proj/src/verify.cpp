#include "tilq/verify.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "sim_kernels.hpp"
#include "tilq/quadrature.hpp"

namespace tilq {

namespace {

using sim::FlatControl;
using sim::NoiseBuffer;
using sim::SimContext;
using sim::StepWork;

FlatControl flatten_law(const ProblemSpec& spec, const Control& control) {
    const int np = spec.grid.size();
    FlatControl fc;
    fc.n = spec.n;
    fc.m = spec.m;
    fc.off.resize(static_cast<std::size_t>(np) * spec.m);
    if (control.law) {
        if (control.law->grid != spec.grid)
            throw ConfigError("spike_test: law grid mismatch");
        fc.Psi.resize(static_cast<std::size_t>(np) * spec.m * spec.n);
        for (int i = 0; i < np; ++i) {
            for (int q = 0; q < spec.m * spec.n; ++q)
                fc.Psi[static_cast<std::size_t>(i) * spec.m * spec.n + q] =
                    control.law->Psi[i].data()[q];
            for (int q = 0; q < spec.m; ++q)
                fc.off[static_cast<std::size_t>(i) * spec.m + q] =
                    control.law->psi[i][q];
        }
    } else if (control.table) {
        if (control.table->grid != spec.grid ||
            static_cast<int>(control.table->u.size()) != np)
            throw ConfigError("spike_test: table grid mismatch");
        for (int i = 0; i < np; ++i)
            for (int q = 0; q < spec.m; ++q)
                fc.off[static_cast<std::size_t>(i) * spec.m + q] =
                    -control.table->u[i][q];
    } else {
        throw ConfigError("spike_test: control has neither law nor table");
    }
    return fc;
}

// Streaming evaluation of the time-t0 cost of one path; optional mean
// trajectory adds the delta-method linearization of the mean-quadratic
// terms.
struct CostStream {
    const ProblemSpec& spec;
    int t0, n, m, N;
    double h;
    Eigen::VectorXd lin_w;
    const double* mean = nullptr;  // [ (i - t0) * n + q ], may be null
    bool use_qbar = false, use_gbar = false;

    CostStream(const ProblemSpec& s, int t0_, const Eigen::VectorXd& xi)
        : spec(s), t0(t0_), n(s.n), m(s.m), N(s.grid.steps()),
          h(s.grid.step()) {
        lin_w = s.costs.mu1[t0] * xi + s.costs.mu2[t0];
    }

    double weight(int i) const { return (i == t0 || i == N) ? 0.5 * h : h; }

    inline double node_term(int i, const double* x, const double* u) const {
        const double w = weight(i);
        const double* Q = spec.costs.Q.at(t0, i);
        double acc = 0.0;
        for (int c = 0; c < n; ++c)
            for (int r = 0; r < n; ++r) acc += x[r] * Q[c * n + r] * x[c];
        double out = 0.5 * w * acc;
        // the control is piecewise constant on steps, so its running cost
        // uses the left-endpoint rule (spike windows then enter exactly)
        if (i < N) {
            const double* R = spec.costs.R.at(t0, i);
            acc = 0.0;
            for (int c = 0; c < m; ++c)
                for (int r = 0; r < m; ++r) acc += u[r] * R[c * m + r] * u[c];
            out += 0.5 * h * acc;
        }
        if (use_qbar) {
            const double* Qb = spec.costs.Qbar.at(t0, i);
            const double* mi = mean + static_cast<std::size_t>(i - t0) * n;
            acc = 0.0;
            for (int c = 0; c < n; ++c)
                for (int r = 0; r < n; ++r) acc += mi[r] * Qb[c * n + r] * x[c];
            out += w * acc;
        }
        if (i == N) {
            for (int q = 0; q < n; ++q) out += lin_w[q] * x[q];
            const auto& G = spec.costs.G[t0];
            acc = 0.0;
            for (int c = 0; c < n; ++c)
                for (int r = 0; r < n; ++r) acc += x[r] * G(r, c) * x[c];
            out += 0.5 * acc;
            if (use_gbar) {
                const auto& Gb = spec.costs.Gbar[t0];
                const double* mT = mean + static_cast<std::size_t>(N - t0) * n;
                acc = 0.0;
                for (int c = 0; c < n; ++c)
                    for (int r = 0; r < n; ++r) acc += mT[r] * Gb(r, c) * x[c];
                out += acc;
            }
        }
        return out;
    }

    // mean-quadratic part evaluated at a mean trajectory
    double mean_quad(const double* mtraj) const {
        double out = 0.0;
        for (int i = t0; i <= N; ++i) {
            const double* Qb = spec.costs.Qbar.at(t0, i);
            const double* mi = mtraj + static_cast<std::size_t>(i - t0) * n;
            double acc = 0.0;
            for (int c = 0; c < n; ++c)
                for (int r = 0; r < n; ++r) acc += mi[r] * Qb[c * n + r] * mi[c];
            out += 0.5 * weight(i) * acc;
        }
        const auto& Gb = spec.costs.Gbar[t0];
        const double* mT = mtraj + static_cast<std::size_t>(N - t0) * n;
        double acc = 0.0;
        for (int c = 0; c < n; ++c)
            for (int r = 0; r < n; ++r) acc += mT[r] * Gb(r, c) * mT[c];
        return out + 0.5 * acc;
    }
};

double sample_sd(const std::vector<double>& v) {
    const long P = static_cast<long>(v.size());
    if (P < 2) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    const double mean = s / static_cast<double>(P);
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(P - 1));
}

double regression_slope(const std::vector<double>& lx,
                        const std::vector<double>& ly) {
    const int n = static_cast<int>(lx.size());
    double mx = 0.0, my = 0.0;
    for (int i = 0; i < n; ++i) {
        mx += lx[i];
        my += ly[i];
    }
    mx /= n;
    my /= n;
    double num = 0.0, den = 0.0;
    for (int i = 0; i < n; ++i) {
        num += (lx[i] - mx) * (ly[i] - my);
        den += (lx[i] - mx) * (lx[i] - mx);
    }
    return num / den;
}

} // namespace

SpikeReport spike_test(const ProblemSpec& spec, const Control& control,
                       int t_index, const Eigen::VectorXd& v,
                       const std::vector<int>& eps_steps, long paths,
                       std::uint64_t seed, std::optional<Eigen::VectorXd> xi,
                       double slack) {
    spec.validate();
    if (control.spike)
        throw ConfigError("spike_test: control must not carry its own spike");
    if (t_index < 0 || t_index >= spec.grid.steps())
        throw ConfigError("spike_test: node index out of range");
    if (v.size() != spec.m)
        throw ConfigError("spike_test: perturbation has wrong length");
    if (eps_steps.empty())
        throw ConfigError("spike_test: empty epsilon ladder");
    std::vector<int> ladder = eps_steps;
    std::sort(ladder.begin(), ladder.end());
    for (int k : ladder) {
        if (k < 1) throw ConfigError("spike_test: epsilon must be a positive multiple of h");
        if (t_index + k > spec.grid.steps())
            throw ConfigError("spike_test: epsilon window exceeds the horizon");
    }
    if (paths < 2) throw ConfigError("spike_test: need at least two paths");

    Eigen::VectorXd start;
    if (xi) {
        if (xi->size() != spec.n)
            throw ConfigError("spike_test: xi has wrong length");
        start = *xi;
    } else {
        const auto mp = mean_state_path(spec, control, 0, spec.x0);
        start = mp[t_index];
    }

    const SimContext cx(spec);
    const int t0 = t_index;
    const int nodes = cx.N - t0 + 1;
    const int E = static_cast<int>(ladder.size());
    const int R = E + 1;
    const double h = spec.grid.step();

    // variant 0: unperturbed; variant e: spike on [t0, t0 + k_e)
    const FlatControl base = flatten_law(spec, control);
    std::vector<FlatControl> ctrls(R, base);
    Eigen::VectorXd vstore = v;
    for (int e = 0; e < E; ++e) {
        ctrls[e + 1].spike_v = vstore.data();
        ctrls[e + 1].spike_begin = t0;
        ctrls[e + 1].spike_end = t0 + ladder[e];
    }

    const bool has_qbar = spec.costs.Qbar.max_abs() > 0.0;
    bool has_gbar = false;
    for (const auto& gb : spec.costs.Gbar)
        if (gb.lpNorm<Eigen::Infinity>() > 0.0) has_gbar = true;
    const bool delta_mode = has_qbar || has_gbar;

    // pass 1 (delta mode only): per-variant mean trajectories
    std::vector<std::vector<double>> means(
        R, std::vector<double>(static_cast<std::size_t>(nodes) * cx.n, 0.0));
    if (delta_mode) {
        const long block = 256;
        const long nblocks = (paths + block - 1) / block;
        std::vector<double> partial(static_cast<std::size_t>(nblocks) * R *
                                        nodes * cx.n,
                                    0.0);
        sim::for_each_path_block(
            paths,
            [&](long p0, long p1) {
                NoiseBuffer noise;
                StepWork wk(cx);
                std::vector<double> x;
                const long b = p0 / block;
                double* slot = partial.data() +
                               static_cast<std::size_t>(b) * R * nodes * cx.n;
                for (long p = p0; p < p1; ++p) {
                    sim::generate_noise(cx, seed, p, t0, noise);
                    for (int r = 0; r < R; ++r) {
                        double* ms = slot + static_cast<std::size_t>(r) * nodes * cx.n;
                        sim::run_path(cx, t0, start.data(), ctrls[r], noise, wk, x,
                                      [&](int i, const double* xs, const double*) {
                                          double* dst =
                                              ms + static_cast<std::size_t>(i - t0) * cx.n;
                                          for (int q = 0; q < cx.n; ++q) dst[q] += xs[q];
                                      });
                    }
                }
            },
            block);
        for (long b = 0; b < nblocks; ++b)
            for (int r = 0; r < R; ++r) {
                const double* src =
                    partial.data() +
                    (static_cast<std::size_t>(b) * R + r) * nodes * cx.n;
                for (std::size_t q = 0; q < means[r].size(); ++q)
                    means[r][q] += src[q];
            }
        for (int r = 0; r < R; ++r)
            for (double& q : means[r]) q /= static_cast<double>(paths);
    }

    // pass 2: per-path cost totals (plus linearized mean-quadratic parts)
    std::vector<double> pv(static_cast<std::size_t>(paths) * R, 0.0);
    sim::for_each_path_block(paths, [&](long p0, long p1) {
        NoiseBuffer noise;
        StepWork wk(cx);
        std::vector<double> x;
        std::vector<CostStream> streams;
        streams.reserve(R);
        for (int r = 0; r < R; ++r) {
            streams.emplace_back(spec, t0, start);
            streams[r].use_qbar = has_qbar;
            streams[r].use_gbar = has_gbar;
            streams[r].mean = delta_mode ? means[r].data() : nullptr;
        }
        for (long p = p0; p < p1; ++p) {
            sim::generate_noise(cx, seed, p, t0, noise);
            for (int r = 0; r < R; ++r) {
                double total = 0.0;
                sim::run_path(cx, t0, start.data(), ctrls[r], noise, wk, x,
                              [&](int i, const double* xs, const double* us) {
                                  total += streams[r].node_term(i, xs, us);
                              });
                pv[static_cast<std::size_t>(p) * R + r] = total;
            }
        }
    });

    // J_r = mean(V_p) - mean-quadratic part at the variant's own mean
    std::vector<double> J(R, 0.0);
    for (int r = 0; r < R; ++r) {
        double s = 0.0;
        for (long p = 0; p < paths; ++p)
            s += pv[static_cast<std::size_t>(p) * R + r];
        J[r] = s / static_cast<double>(paths);
        if (delta_mode) {
            CostStream cs(spec, t0, start);
            J[r] -= cs.mean_quad(means[r].data());
        }
    }

    SpikeReport rep;
    rep.t_index = t_index;
    rep.t = spec.grid.node(t_index);
    rep.step = h;
    rep.v = v;
    rep.xi = start;
    rep.eps_steps = ladder;
    rep.paths = paths;
    rep.seed = seed;
    rep.slack = slack;

    std::vector<double> diff(paths);
    for (int e = 0; e < E; ++e) {
        const double eps = ladder[e] * h;
        for (long p = 0; p < paths; ++p)
            diff[p] = pv[static_cast<std::size_t>(p) * R + (e + 1)] -
                      pv[static_cast<std::size_t>(p) * R + 0];
        rep.dj_over_eps.push_back((J[e + 1] - J[0]) / eps);
        rep.dj_stderr.push_back(sample_sd(diff) /
                                (eps * std::sqrt(static_cast<double>(paths))));
    }

    if (E == 1) {
        rep.extrapolated = rep.dj_over_eps[0];
        rep.extrapolated_stderr = rep.dj_stderr[0];
    } else {
        const double e1 = ladder[0] * h, e2 = ladder[1] * h;
        const double rho = e2 / e1;
        rep.extrapolated =
            (rho * rep.dj_over_eps[0] - rep.dj_over_eps[1]) / (rho - 1.0);
        for (long p = 0; p < paths; ++p) {
            const double d1 = (pv[static_cast<std::size_t>(p) * R + 1] -
                               pv[static_cast<std::size_t>(p) * R + 0]) / e1;
            const double d2 = (pv[static_cast<std::size_t>(p) * R + 2] -
                               pv[static_cast<std::size_t>(p) * R + 0]) / e2;
            diff[p] = (rho * d1 - d2) / (rho - 1.0);
        }
        rep.extrapolated_stderr =
            sample_sd(diff) / std::sqrt(static_cast<double>(paths));
    }
    rep.equilibrium_consistent =
        rep.extrapolated >= -(3.0 * rep.extrapolated_stderr + slack);
    return rep;
}

std::vector<double> first_order_condition(
    const ProblemSpec& spec, const FlowSolution& flow, const FeedbackLaw& law,
    const std::vector<Eigen::VectorXd>& states) {
    if (flow.M.grid() != spec.grid || law.grid != spec.grid)
        throw ConfigError("first_order_condition: mismatched grids");
    const int np = spec.grid.size();
    if (static_cast<int>(states.size()) != np)
        throw ConfigError("first_order_condition: trajectory length mismatch");

    std::vector<double> out(np);
    for (int i = 0; i < np; ++i) {
        const Eigen::VectorXd& X = states[i];
        const Eigen::VectorXd u = law.control(i, X);
        const Eigen::MatrixXd M = flow.M.diag(i);
        const Eigen::MatrixXd sumM =
            M + flow.Mbar.diag(i) + flow.Upsilon.diag(i);
        const Eigen::VectorXd ph = flow.phi.mat(i, i).col(0);

        const Eigen::VectorXd p = -(sumM * X) - ph;
        Eigen::VectorXd res = spec.costs.R.mat(i, i) * u -
                              spec.coeffs.B[i].transpose() * p;
        for (int j = 0; j < spec.d; ++j) {
            const Eigen::VectorXd qj =
                -M * (spec.coeffs.C[j][i] * X + spec.coeffs.D[j][i] * u +
                      spec.coeffs.sigma[j][i]);
            res -= spec.coeffs.D[j][i].transpose() * qj;
        }
        for (int k = 0; k < spec.jumps.count(); ++k) {
            const Eigen::VectorXd rk =
                -M * (spec.coeffs.E[k][i] * X + spec.coeffs.F[k][i] * u +
                      spec.coeffs.c[k][i]);
            res -= spec.jumps.intensities[k] *
                   spec.coeffs.F[k][i].transpose() * rk;
        }
        out[i] = res.norm();
    }
    return out;
}

SecondOrderReport second_order_condition(const ProblemSpec& spec,
                                         const SecondOrderField& P) {
    if (P.P.grid() != spec.grid)
        throw ConfigError("second_order_condition: mismatched grids");
    const int np = spec.grid.size();
    SecondOrderReport rep;
    rep.min_eig.resize(np);
    rep.pass = true;
    for (int i = 0; i < np; ++i) {
        const Eigen::MatrixXd Pd = P.P.diag(i);
        Eigen::MatrixXd W = spec.costs.R.mat(i, i);
        for (int j = 0; j < spec.d; ++j)
            W -= spec.coeffs.D[j][i].transpose() * Pd * spec.coeffs.D[j][i];
        for (int k = 0; k < spec.jumps.count(); ++k)
            W -= spec.jumps.intensities[k] *
                 spec.coeffs.F[k][i].transpose() * Pd * spec.coeffs.F[k][i];
        if (spec.m == 1) {
            rep.min_eig[i] = W(0, 0);
        } else {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(W));
            rep.min_eig[i] = es.eigenvalues().minCoeff();
        }
        if (rep.min_eig[i] < rep.tol) rep.pass = false;
    }
    return rep;
}

VariationOrderReport variation_order_test(const ProblemSpec& spec, int t_index,
                                          const Eigen::VectorXd& v,
                                          const std::vector<int>& eps_steps,
                                          long paths, std::uint64_t seed) {
    spec.validate();
    if (t_index < 0 || t_index >= spec.grid.steps())
        throw ConfigError("variation_order_test: node index out of range");
    if (v.size() != spec.m)
        throw ConfigError("variation_order_test: perturbation has wrong length");
    std::vector<int> ladder = eps_steps;
    std::sort(ladder.begin(), ladder.end());
    if (ladder.empty() || ladder.front() < 1 ||
        t_index + ladder.back() > spec.grid.steps())
        throw ConfigError("variation_order_test: bad epsilon ladder");

    const SimContext cx(spec);
    const int n = cx.n, t0 = t_index;
    const int E = static_cast<int>(ladder.size());
    const double h = spec.grid.step();

    VariationOrderReport rep;
    rep.eps_steps = ladder;

    double dnorm = 0.0, fnorm = 0.0, bnorm = 0.0;
    for (int i = 0; i < spec.grid.size(); ++i) {
        for (int j = 0; j < spec.d; ++j)
            dnorm = std::max(dnorm, spec.coeffs.D[j][i].lpNorm<Eigen::Infinity>());
        for (int k = 0; k < cx.K; ++k)
            fnorm = std::max(fnorm, spec.coeffs.F[k][i].lpNorm<Eigen::Infinity>());
        bnorm = std::max(bnorm, spec.coeffs.B[i].lpNorm<Eigen::Infinity>());
    }
    rep.y_skipped = (dnorm == 0.0 && fnorm == 0.0);
    rep.z_skipped = (bnorm == 0.0);
    if (rep.y_skipped)
        rep.note += "first variational process is identically zero (no D or F source); ";
    if (rep.z_skipped)
        rep.note += "second variational process is identically zero (no B source); ";
    if (rep.y_skipped && rep.z_skipped) return rep;

    // four checkpoint nodes for the zero-mean property of y
    std::vector<int> checks;
    for (int q = 1; q <= 4; ++q)
        checks.push_back(t0 + (cx.N - t0) * q / 4);

    std::vector<double> supy(static_cast<std::size_t>(paths) * E);
    std::vector<double> supz(static_cast<std::size_t>(paths) * E);
    std::vector<double> ycheck(static_cast<std::size_t>(paths) * E *
                               checks.size() * n);

    sim::for_each_path_block(paths, [&](long p0, long p1) {
        NoiseBuffer noise;
        std::vector<double> y(n), z(n), yn(n), zn(n), w(n);
        const auto& cf = spec.coeffs;
        for (long p = p0; p < p1; ++p) {
            sim::generate_noise(cx, seed, p, t0, noise);
            for (int e = 0; e < E; ++e) {
                const int wend = t0 + ladder[e];
                std::fill(y.begin(), y.end(), 0.0);
                std::fill(z.begin(), z.end(), 0.0);
                double sy = 0.0, sz = 0.0;
                int ci = 0;
                for (int i = t0; i <= cx.N; ++i) {
                    double a2 = 0.0, b2 = 0.0;
                    for (int q = 0; q < n; ++q) {
                        a2 += y[q] * y[q];
                        b2 += z[q] * z[q];
                    }
                    sy = std::max(sy, a2);
                    sz = std::max(sz, b2);
                    while (ci < static_cast<int>(checks.size()) && checks[ci] == i) {
                        double* dst = ycheck.data() +
                                      ((static_cast<std::size_t>(p) * E + e) *
                                           checks.size() + ci) * n;
                        for (int q = 0; q < n; ++q) dst[q] = y[q];
                        ++ci;
                    }
                    if (i == cx.N) break;
                    const int s = i - t0;
                    const bool in_w = i < wend;
                    const double* zrow = noise.z.data() +
                                         static_cast<std::size_t>(s) * cx.d;
                    const int* crow = noise.cnt.data() +
                                      static_cast<std::size_t>(s) * cx.K;
                    for (int q = 0; q < n; ++q) {
                        yn[q] = y[q];
                        zn[q] = z[q];
                    }
                    kern::mv_n(yn.data(), cf.A[i].data(), y.data(), n, n, cx.h);
                    kern::mv_n(zn.data(), cf.A[i].data(), z.data(), n, n, cx.h);
                    if (in_w)
                        kern::mv_n(zn.data(), cf.B[i].data(), v.data(), n, cx.m,
                                   cx.h);
                    for (int j = 0; j < cx.d; ++j) {
                        const double g = cx.sqrt_h * zrow[j];
                        kern::set_zero(w.data(), n);
                        kern::mv_n(w.data(), cf.C[j][i].data(), y.data(), n, n, 1.0);
                        if (in_w)
                            kern::mv_n(w.data(), cf.D[j][i].data(), v.data(), n,
                                       cx.m, 1.0);
                        kern::axpy(yn.data(), w.data(), n, g);
                        kern::set_zero(w.data(), n);
                        kern::mv_n(w.data(), cf.C[j][i].data(), z.data(), n, n, 1.0);
                        kern::axpy(zn.data(), w.data(), n, g);
                    }
                    for (int k = 0; k < cx.K; ++k) {
                        const double dn = static_cast<double>(crow[k]) - cx.comp[k];
                        kern::set_zero(w.data(), n);
                        kern::mv_n(w.data(), cf.E[k][i].data(), y.data(), n, n, 1.0);
                        if (in_w)
                            kern::mv_n(w.data(), cf.F[k][i].data(), v.data(), n,
                                       cx.m, 1.0);
                        kern::axpy(yn.data(), w.data(), n, dn);
                        kern::set_zero(w.data(), n);
                        kern::mv_n(w.data(), cf.E[k][i].data(), z.data(), n, n, 1.0);
                        kern::axpy(zn.data(), w.data(), n, dn);
                    }
                    y.swap(yn);
                    z.swap(zn);
                }
                supy[static_cast<std::size_t>(p) * E + e] = sy;
                supz[static_cast<std::size_t>(p) * E + e] = sz;
            }
        }
    });

    std::vector<double> lx, lyy, lyz, col(paths);
    for (int e = 0; e < E; ++e) {
        for (long p = 0; p < paths; ++p)
            col[p] = supy[static_cast<std::size_t>(p) * E + e];
        double s = std::accumulate(col.begin(), col.end(), 0.0);
        rep.e_sup_y2.push_back(s / static_cast<double>(paths));
        rep.stderr_y2.push_back(sample_sd(col) /
                                std::sqrt(static_cast<double>(paths)));
        for (long p = 0; p < paths; ++p)
            col[p] = supz[static_cast<std::size_t>(p) * E + e];
        s = std::accumulate(col.begin(), col.end(), 0.0);
        rep.e_sup_z2.push_back(s / static_cast<double>(paths));
        rep.stderr_z2.push_back(sample_sd(col) /
                                std::sqrt(static_cast<double>(paths)));
        lx.push_back(std::log(ladder[e] * h));
    }
    if (!rep.y_skipped) {
        for (int e = 0; e < E; ++e) lyy.push_back(std::log(rep.e_sup_y2[e]));
        rep.slope_y = regression_slope(lx, lyy);
    }
    if (!rep.z_skipped) {
        for (int e = 0; e < E; ++e) lyz.push_back(std::log(rep.e_sup_z2[e]));
        rep.slope_z = regression_slope(lx, lyz);
    }

    // E[y(s)] = 0 at each checkpoint, for every ladder entry
    if (!rep.y_skipped) {
        for (int e = 0; e < E; ++e)
            for (std::size_t c = 0; c < checks.size(); ++c)
                for (int q = 0; q < n; ++q) {
                    for (long p = 0; p < paths; ++p)
                        col[p] = ycheck[((static_cast<std::size_t>(p) * E + e) *
                                             checks.size() + c) * n + q];
                    const double mean =
                        std::accumulate(col.begin(), col.end(), 0.0) /
                        static_cast<double>(paths);
                    const double se = sample_sd(col) /
                                      std::sqrt(static_cast<double>(paths));
                    if (se > 0.0)
                        rep.max_y_mean_over_stderr = std::max(
                            rep.max_y_mean_over_stderr, std::abs(mean) / se);
                }
        rep.y_mean_ok = rep.max_y_mean_over_stderr <= 3.0;
    }
    return rep;
}

InconsistencyReport inconsistency_demo(const CounterexampleParams& params,
                                       int r_index, long paths,
                                       std::uint64_t seed,
                                       const std::vector<int>& eps_steps) {
    if (r_index <= params.t_index)
        throw ConfigError("inconsistency_demo: r must be later than t");
    if (r_index >= params.grid.steps())
        throw ConfigError("inconsistency_demo: r must be before the horizon");

    PrecommittedResult pre = counterexample_precommitted(params);
    const ProblemSpec& spec = pre.problem;
    const int N = params.grid.steps();
    const double h = params.grid.step();

    InconsistencyReport rep;
    rep.M_t = pre.M_t;
    rep.r_index = r_index;
    rep.resolved_at_r = 0.0;  // re-solved precommitted control vanishes at its
                              // own initial node

    // ensemble statistics of the stale precommitted control at r
    Control pc;
    pc.law = &pre.precommitted;
    Eigen::VectorXd x0(1);
    x0[0] = params.x;
    PathEnsemble ens =
        simulate(spec, pc, params.t_index, x0, paths, seed);
    {
        std::vector<double> absu(paths);
        const double bm = params.b * pre.M_t[r_index];
        for (long p = 0; p < paths; ++p)
            absu[p] = std::abs(-bm * (ens.state(p, r_index)[0] - params.x));
        double s = std::accumulate(absu.begin(), absu.end(), 0.0);
        rep.margin_mean_abs = s / static_cast<double>(paths);
        rep.margin_stderr =
            sample_sd(absu) / std::sqrt(static_cast<double>(paths));
        rep.contradiction = rep.margin_mean_abs > 5.0 * rep.margin_stderr;
    }

    std::vector<int> ladder = eps_steps;
    if (ladder.empty()) {
        for (int k : {1, 2, 4, 8})
            if (r_index + k <= N) ladder.push_back(k);
        if (ladder.empty()) ladder.push_back(1);
    }

    // deterministic displaced start for the spike tests at r
    const double tr = params.grid.node(r_index);
    const double tt = params.grid.node(params.t_index);
    Eigen::VectorXd xir(1);
    xir[0] = params.x + params.sigma * std::sqrt(std::max(tr - tt, h));

    // the first-order residual of the precommitted law at (r, xi_r):
    // K(r) = -b (xi_r - x) [M^t(r) + h(r) (1 - G_r)],
    // G_r = exp(-b^2 int_r^T M^t)
    {
        std::vector<double> tail(pre.M_t.begin() + r_index, pre.M_t.end());
        const auto cum = cumulative_tail_integral(tail, h);
        const double Gr = std::exp(-params.b * params.b * cum[0]);
        const double K = -params.b * (xir[0] - params.x) *
                         (pre.M_t[r_index] + params.h[r_index] * (1.0 - Gr));
        rep.adversarial_v = -K;  // minimizer of K v + v^2 / 2
    }

    Eigen::VectorXd vadv(1);
    vadv[0] = rep.adversarial_v;
    rep.precommitted_spike =
        spike_test(spec, pc, r_index, vadv, ladder, paths, seed + 1, xir);

    Control eq;
    eq.law = &pre.companion.law;
    Eigen::VectorXd vone(1);
    vone[0] = 1.0;
    rep.companion_spike =
        spike_test(spec, eq, r_index, vone, ladder, paths, seed + 2, xir);

    rep.companion_gain.resize(params.grid.size());
    for (int i = 0; i < params.grid.size(); ++i)
        rep.companion_gain[i] = -pre.companion.law.Psi[i](0, 0);
    return rep;
}

} // namespace tilq

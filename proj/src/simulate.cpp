#include "tilq/simulate.hpp"

#include <cmath>

#include "sim_kernels.hpp"

namespace tilq {

namespace {

using sim::FlatControl;
using sim::NoiseBuffer;
using sim::SimContext;
using sim::StepWork;

void check_control(const ProblemSpec& spec, const Control& control, int t_start) {
    if (!control.law && !control.table)
        throw ConfigError("control: neither law nor table given");
    if (control.law && control.law->grid != spec.grid)
        throw ConfigError("control: law grid mismatch");
    if (control.table &&
        (control.table->grid != spec.grid ||
         static_cast<int>(control.table->u.size()) != spec.grid.size()))
        throw ConfigError("control: table grid mismatch");
    if (control.spike) {
        if (control.spike->v.size() != spec.m)
            throw ConfigError("control: spike perturbation has wrong length");
        if (control.spike->begin < t_start || control.spike->end > spec.grid.steps() ||
            control.spike->begin >= control.spike->end)
            throw ConfigError("control: spike window outside the horizon");
    }
}

FlatControl flatten_control(const ProblemSpec& spec, const Control& control) {
    const int np = spec.grid.size();
    FlatControl fc;
    fc.n = spec.n;
    fc.m = spec.m;
    fc.off.resize(static_cast<std::size_t>(np) * spec.m);
    if (control.law) {
        fc.Psi.resize(static_cast<std::size_t>(np) * spec.m * spec.n);
        for (int i = 0; i < np; ++i) {
            const auto& P = control.law->Psi[i];
            const auto& p = control.law->psi[i];
            if (P.rows() != spec.m || P.cols() != spec.n || p.size() != spec.m)
                throw ConfigError("control: law gain shape mismatch");
            for (int q = 0; q < spec.m * spec.n; ++q)
                fc.Psi[static_cast<std::size_t>(i) * spec.m * spec.n + q] = P.data()[q];
            for (int q = 0; q < spec.m; ++q)
                fc.off[static_cast<std::size_t>(i) * spec.m + q] = p[q];
        }
    } else {
        for (int i = 0; i < np; ++i) {
            const auto& u = control.table->u[i];
            if (u.size() != spec.m)
                throw ConfigError("control: table entry has wrong length");
            for (int q = 0; q < spec.m; ++q)
                fc.off[static_cast<std::size_t>(i) * spec.m + q] = -u[q];
        }
    }
    if (control.spike) {
        fc.spike_v = control.spike->v.data();
        fc.spike_begin = control.spike->begin;
        fc.spike_end = control.spike->end;
    }
    return fc;
}

} // namespace

PathEnsemble simulate(const ProblemSpec& spec, const Control& control,
                      int t_start, const Eigen::VectorXd& xi, long paths,
                      std::uint64_t seed) {
    spec.validate();
    if (t_start < 0 || t_start >= spec.grid.steps())
        throw ConfigError("simulate: t_start must satisfy 0 <= t_start < N");
    if (paths < 1) throw ConfigError("simulate: need at least one path");
    if (xi.size() != spec.n) throw ConfigError("simulate: xi has wrong length");
    check_control(spec, control, t_start);

    const SimContext cx(spec);
    const FlatControl fc = flatten_control(spec, control);

    PathEnsemble out;
    out.grid = spec.grid;
    out.t_start = t_start;
    out.xi = xi;
    out.n = spec.n;
    out.paths = paths;
    out.seed = seed;
    const int nodes = out.nodes();
    out.states.assign(static_cast<std::size_t>(paths) * nodes * spec.n, 0.0);

    std::vector<std::vector<JumpEvent>> events(paths);

    sim::for_each_path_block(paths, [&](long p0, long p1) {
        NoiseBuffer noise;
        StepWork wk(cx);
        std::vector<double> x;
        for (long p = p0; p < p1; ++p) {
            sim::generate_noise(cx, seed, p, t_start, noise);
            double* slot =
                out.states.data() + static_cast<std::size_t>(p) * nodes * cx.n;
            sim::run_path(cx, t_start, xi.data(), fc, noise, wk, x,
                          [&](int i, const double* xs, const double*) {
                              double* dst =
                                  slot + static_cast<std::size_t>(i - t_start) * cx.n;
                              for (int q = 0; q < cx.n; ++q) {
                                  if (!std::isfinite(xs[q]))
                                      throw SolverError(
                                          "simulate: non-finite state on path " +
                                          std::to_string(p) + " at node " +
                                          std::to_string(i));
                                  dst[q] = xs[q];
                              }
                          });
            for (int s = 0; s < cx.N - t_start; ++s)
                for (int k = 0; k < cx.K; ++k) {
                    const int c = noise.cnt[static_cast<std::size_t>(s) * cx.K + k];
                    if (c > 0) events[p].push_back({p, t_start + s, k, c});
                }
        }
    });

    for (long p = 0; p < paths; ++p)
        out.jump_events.insert(out.jump_events.end(), events[p].begin(),
                               events[p].end());
    return out;
}

CostEstimate estimate_cost(const ProblemSpec& spec, const Control& control,
                           int t_start, const Eigen::VectorXd& xi,
                           const PathEnsemble& ensemble) {
    spec.validate();
    check_control(spec, control, t_start);
    if (ensemble.grid != spec.grid || ensemble.t_start != t_start ||
        ensemble.n != spec.n || ensemble.paths < 1)
        throw ConfigError("estimate_cost: ensemble does not match the request");
    if ((ensemble.xi - xi).lpNorm<Eigen::Infinity>() != 0.0)
        throw ConfigError("estimate_cost: ensemble started from a different state");

    const int n = spec.n, m = spec.m, N = spec.grid.steps();
    const int nodes = ensemble.nodes();
    const long P = ensemble.paths;
    const double h = spec.grid.step();
    const FlatControl fc = flatten_control(spec, control);

    // pass 1: mean trajectory (fixed path order)
    std::vector<double> mean(static_cast<std::size_t>(nodes) * n, 0.0);
    for (long p = 0; p < P; ++p) {
        const double* s =
            ensemble.states.data() + static_cast<std::size_t>(p) * nodes * n;
        for (std::size_t q = 0; q < mean.size(); ++q) mean[q] += s[q];
    }
    for (double& v : mean) v /= static_cast<double>(P);

    const bool has_qbar = spec.costs.Qbar.max_abs() > 0.0;
    const bool has_gbar = [&] {
        double w = 0.0;
        for (const auto& gb : spec.costs.Gbar)
            w = std::max(w, gb.lpNorm<Eigen::Infinity>());
        return w > 0.0;
    }();

    auto weight = [&](int i) { return (i == t_start || i == N) ? 0.5 * h : h; };

    // pass 2: per-path quadratic parts; the mean-quadratic terms enter the
    // standard error through their linearization around the ensemble mean
    const Eigen::VectorXd lin_w =
        spec.costs.mu1[t_start] * xi + spec.costs.mu2[t_start];
    double sum_rq = 0.0, sum_rr = 0.0, sum_lin = 0.0, sum_g = 0.0;
    double sum_v = 0.0, sum_v2 = 0.0;
    std::vector<double> u(m);
    for (long p = 0; p < P; ++p) {
        double rq = 0.0, rr = 0.0, dl = 0.0;
        for (int i = t_start; i <= N; ++i) {
            const double* x = ensemble.state(p, i);
            const double w = weight(i);
            const double* Q = spec.costs.Q.at(t_start, i);
            double acc = 0.0;
            for (int c = 0; c < n; ++c)
                for (int r = 0; r < n; ++r) acc += x[r] * Q[c * n + r] * x[c];
            rq += 0.5 * w * acc;

            // left-endpoint rule for the piecewise-constant control term
            if (i < N) {
                fc.eval(i, x, u.data());
                const double* R = spec.costs.R.at(t_start, i);
                acc = 0.0;
                for (int c = 0; c < m; ++c)
                    for (int r = 0; r < m; ++r)
                        acc += u[r] * R[c * m + r] * u[c];
                rr += 0.5 * h * acc;
            }

            if (has_qbar) {
                const double* Qb = spec.costs.Qbar.at(t_start, i);
                const double* mi =
                    mean.data() + static_cast<std::size_t>(i - t_start) * n;
                acc = 0.0;
                for (int c = 0; c < n; ++c)
                    for (int r = 0; r < n; ++r) acc += mi[r] * Qb[c * n + r] * x[c];
                dl += w * acc;
            }
        }
        const double* xT = ensemble.state(p, N);
        double lin = 0.0;
        for (int q = 0; q < n; ++q) lin += lin_w[q] * xT[q];
        const auto& G = spec.costs.G[t_start];
        double g = 0.0;
        for (int c = 0; c < n; ++c)
            for (int r = 0; r < n; ++r) g += xT[r] * G(r, c) * xT[c];
        g *= 0.5;
        if (has_gbar) {
            const auto& Gb = spec.costs.Gbar[t_start];
            const double* mT =
                mean.data() + static_cast<std::size_t>(N - t_start) * n;
            for (int c = 0; c < n; ++c)
                for (int r = 0; r < n; ++r) dl += mT[r] * Gb(r, c) * xT[c];
        }
        sum_rq += rq;
        sum_rr += rr;
        sum_lin += lin;
        sum_g += g;
        const double v = rq + rr + lin + g + dl;
        sum_v += v;
        sum_v2 += v * v;
    }

    CostEstimate est;
    est.paths = P;
    est.parts.running_q = sum_rq / static_cast<double>(P);
    est.parts.running_r = sum_rr / static_cast<double>(P);
    est.parts.terminal_linear = sum_lin / static_cast<double>(P);
    est.parts.terminal_g = sum_g / static_cast<double>(P);
    double qbar = 0.0;
    if (has_qbar)
        for (int i = t_start; i <= N; ++i) {
            const double* Qb = spec.costs.Qbar.at(t_start, i);
            const double* mi =
                mean.data() + static_cast<std::size_t>(i - t_start) * n;
            double acc = 0.0;
            for (int c = 0; c < n; ++c)
                for (int r = 0; r < n; ++r) acc += mi[r] * Qb[c * n + r] * mi[c];
            qbar += 0.5 * weight(i) * acc;
        }
    est.parts.running_qbar = qbar;
    if (has_gbar) {
        const auto& Gb = spec.costs.Gbar[t_start];
        const double* mT = mean.data() + static_cast<std::size_t>(N - t_start) * n;
        double acc = 0.0;
        for (int c = 0; c < n; ++c)
            for (int r = 0; r < n; ++r) acc += mT[r] * Gb(r, c) * mT[c];
        est.parts.terminal_gbar = 0.5 * acc;
    }
    est.mean = est.parts.sum();
    if (P > 1) {
        const double vm = sum_v / static_cast<double>(P);
        const double var =
            std::max(0.0, (sum_v2 - static_cast<double>(P) * vm * vm) /
                              static_cast<double>(P - 1));
        est.std_error = std::sqrt(var / static_cast<double>(P));
    }
    return est;
}

std::vector<Eigen::VectorXd> mean_state_path(const ProblemSpec& spec,
                                             const Control& control,
                                             int t_start,
                                             const Eigen::VectorXd& xi) {
    spec.validate();
    check_control(spec, control, t_start);
    if (xi.size() != spec.n)
        throw ConfigError("mean_state_path: xi has wrong length");
    const int N = spec.grid.steps();
    const double h = spec.grid.step();

    // Compensated noise drops out in expectation, so the mean solves
    // x' = A x + B u(s, x) + b; classical RK4 with midpoint-averaged tables.
    auto rhs = [&](int i, int stage, const Eigen::VectorXd& x) -> Eigen::VectorXd {
        auto blend = [&](const auto& tab) {
            return stage == 0   ? tab[i]
                   : stage == 2 ? tab[i + 1]
                                : ((tab[i] + tab[i + 1]) * 0.5).eval();
        };
        const Eigen::MatrixXd A = blend(spec.coeffs.A);
        const Eigen::MatrixXd B = blend(spec.coeffs.B);
        const Eigen::VectorXd b = blend(spec.coeffs.b);
        Eigen::VectorXd u;
        if (stage == 0) u = control.at(i, x);
        else if (stage == 2) u = control.at(i + 1, x);
        else u = 0.5 * (control.at(i, x) + control.at(i + 1, x));
        return A * x + B * u + b;
    };

    std::vector<Eigen::VectorXd> out;
    out.reserve(N - t_start + 1);
    Eigen::VectorXd x = xi;
    out.push_back(x);
    for (int i = t_start; i < N; ++i) {
        const Eigen::VectorXd k1 = rhs(i, 0, x);
        const Eigen::VectorXd k2 = rhs(i, 1, x + 0.5 * h * k1);
        const Eigen::VectorXd k3 = rhs(i, 1, x + 0.5 * h * k2);
        const Eigen::VectorXd k4 = rhs(i, 2, x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.push_back(x);
    }
    return out;
}

} // namespace tilq

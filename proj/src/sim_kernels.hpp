#ifndef TILQ_SIM_KERNELS_HPP
#define TILQ_SIM_KERNELS_HPP

// Shared Euler-Maruyama path kernel: simulate.cpp drives it for ensembles
// and cost estimates, verify.cpp for paired spike runs and the variational
// processes. Paths are keyed by (seed, path index) so any scheduling of the
// path loop produces identical output.

#include <cmath>
#include <cstdint>
#include <vector>

#include "dense_kernels.hpp"
#include "sim_rng.hpp"
#include "tilq/parallel.hpp"
#include "tilq/problem.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tilq::sim {

struct SimContext {
    const ProblemSpec& spec;
    int n, m, d, K, N;
    double h, sqrt_h;
    std::vector<double> comp;        // theta_k * h
    std::vector<double> exp_neg_lh;  // exp(-theta_k h)

    explicit SimContext(const ProblemSpec& s)
        : spec(s), n(s.n), m(s.m), d(s.d), K(s.jumps.count()),
          N(s.grid.steps()), h(s.grid.step()), sqrt_h(std::sqrt(s.grid.step())) {
        for (int k = 0; k < K; ++k) {
            comp.push_back(s.jumps.intensities[k] * h);
            exp_neg_lh.push_back(std::exp(-comp.back()));
        }
    }
};

struct NoiseBuffer {
    std::vector<double> z;    // [(i - t0) * d + j] standard normals
    std::vector<int> cnt;     // [(i - t0) * K + k] Poisson counts

    void resize(int steps, int d, int K) {
        z.resize(static_cast<std::size_t>(steps) * d);
        cnt.resize(static_cast<std::size_t>(steps) * K);
    }
};

// Fixed draw order per step: d normals, then K Poisson counts.
inline void generate_noise(const SimContext& cx, std::uint64_t seed, long path,
                           int t0, NoiseBuffer& buf) {
    const int steps = cx.N - t0;
    buf.resize(steps, cx.d, cx.K);
    auto eng = rng::path_engine(seed, static_cast<std::uint64_t>(path));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int s = 0; s < steps; ++s) {
        for (int j = 0; j < cx.d; ++j) buf.z[static_cast<std::size_t>(s) * cx.d + j] = gauss(eng);
        for (int k = 0; k < cx.K; ++k)
            buf.cnt[static_cast<std::size_t>(s) * cx.K + k] =
                rng::poisson_count(eng, cx.exp_neg_lh[k]);
    }
}

struct StepWork {
    std::vector<double> w;      // n temp
    std::vector<double> xnext;  // n
    std::vector<double> u;      // m
    explicit StepWork(const SimContext& cx) : w(cx.n), xnext(cx.n), u(cx.m) {}
};

// x_{i+1} = x + (A x + B u + b) h + sum_j (C_j x + D_j u + sig_j) sqrt(h) z_j
//         + sum_k (E_k x + F_k u + c_k) (dN_k - theta_k h)
inline void euler_step(const SimContext& cx, int i, const double* x,
                       const double* u, const double* z, const int* cnt,
                       double* xn, StepWork& wk) {
    const int n = cx.n, m = cx.m;
    const auto& cf = cx.spec.coeffs;
    for (int q = 0; q < n; ++q) xn[q] = x[q];

    for (int q = 0; q < n; ++q) wk.w[q] = cf.b[i][q];
    kern::mv_n(wk.w.data(), cf.A[i].data(), x, n, n, 1.0);
    kern::mv_n(wk.w.data(), cf.B[i].data(), u, n, m, 1.0);
    kern::axpy(xn, wk.w.data(), n, cx.h);

    for (int j = 0; j < cx.d; ++j) {
        for (int q = 0; q < n; ++q) wk.w[q] = cf.sigma[j][i][q];
        kern::mv_n(wk.w.data(), cf.C[j][i].data(), x, n, n, 1.0);
        kern::mv_n(wk.w.data(), cf.D[j][i].data(), u, n, m, 1.0);
        kern::axpy(xn, wk.w.data(), n, cx.sqrt_h * z[j]);
    }
    for (int k = 0; k < cx.K; ++k) {
        const double dn = static_cast<double>(cnt[k]) - cx.comp[k];
        if (dn == 0.0 && cnt[k] == 0 && cx.comp[k] == 0.0) continue;
        for (int q = 0; q < n; ++q) wk.w[q] = cf.c[k][i][q];
        kern::mv_n(wk.w.data(), cf.E[k][i].data(), x, n, n, 1.0);
        kern::mv_n(wk.w.data(), cf.F[k][i].data(), u, n, m, 1.0);
        kern::axpy(xn, wk.w.data(), n, dn);
    }
}

// Flattened feedback law with optional spike overlay; table controls use
// the same interface with Psi = 0.
struct FlatControl {
    int n = 0, m = 0;
    std::vector<double> Psi;   // np * m * n (column-major per node), empty for tables
    std::vector<double> off;   // np * m: psi for laws, -u for tables
    const double* spike_v = nullptr;
    int spike_begin = 0, spike_end = 0;

    // u = -Psi x - off (+ v inside the window)
    inline void eval(int node, const double* x, double* u) const {
        const double* o = off.data() + static_cast<std::size_t>(node) * m;
        for (int q = 0; q < m; ++q) u[q] = -o[q];
        if (!Psi.empty())
            kern::mv_n(u, Psi.data() + static_cast<std::size_t>(node) * m * n, x,
                       m, n, -1.0);
        if (spike_v && node >= spike_begin && node < spike_end)
            for (int q = 0; q < m; ++q) u[q] += spike_v[q];
    }
};

// Runs one path from (t0, xi); the visitor sees every node (including t0
// and N) with the state and the control evaluated there.
template <class Visitor>
inline void run_path(const SimContext& cx, int t0, const double* xi,
                     const FlatControl& ctrl, const NoiseBuffer& noise,
                     StepWork& wk, std::vector<double>& x, Visitor&& visit) {
    x.assign(xi, xi + cx.n);
    for (int i = t0; i <= cx.N; ++i) {
        ctrl.eval(i, x.data(), wk.u.data());
        visit(i, x.data(), wk.u.data());
        if (i == cx.N) break;
        const int s = i - t0;
        euler_step(cx, i, x.data(), wk.u.data(),
                   noise.z.data() + static_cast<std::size_t>(s) * cx.d,
                   noise.cnt.data() + static_cast<std::size_t>(s) * cx.K,
                   wk.xnext.data(), wk);
        x.swap(wk.xnext);
    }
}

// Parallel loop over path blocks; each block writes only its own slots, so
// the result is independent of the thread count.
template <class Body>
inline void for_each_path_block(long paths, Body&& body, long block = 256) {
    const long nblocks = (paths + block - 1) / block;
#ifdef _OPENMP
    if (exec_mode() == ExecMode::OpenMP) {
        const int threads = exec_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads > 0 ? threads : omp_get_max_threads())
        for (long b = 0; b < nblocks; ++b)
            body(b * block, std::min(paths, (b + 1) * block));
        return;
    }
#endif
    for (long b = 0; b < nblocks; ++b)
        body(b * block, std::min(paths, (b + 1) * block));
}

} // namespace tilq::sim

#endif

#include "tilq/flow.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <limits>

#include "dense_kernels.hpp"
#include "tilq/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tilq {

namespace {

using kern::axpy;
using kern::mm_nn;
using kern::mm_tn;
using kern::mv_n;
using kern::mv_t;
using kern::set_zero;

// Flattened coefficient views plus midpoint tables. The ODE stages sit at
// interval endpoints and midpoints; node values alias the spec's Eigen
// storage, midpoints are averaged once up front.
struct FlowContext {
    const ProblemSpec& spec;
    int n, m, d, K, N;
    int nn, nm, mn;
    double h;
    std::vector<double> theta;

    std::vector<double> midA, midB, midb;
    std::vector<std::vector<double>> midC, midD, midsig;
    std::vector<std::vector<double>> midE, midF, midc;

    explicit FlowContext(const ProblemSpec& s)
        : spec(s), n(s.n), m(s.m), d(s.d), K(s.jumps.count()),
          N(s.grid.steps()), nn(s.n * s.n), nm(s.n * s.m), mn(s.m * s.n),
          h(s.grid.step()), theta(s.jumps.intensities) {
        auto mid_of = [](const auto& tab, int len) {
            std::vector<double> out(static_cast<std::size_t>(tab.size() - 1) * len);
            for (std::size_t i = 0; i + 1 < tab.size(); ++i)
                for (int q = 0; q < len; ++q)
                    out[i * len + q] =
                        0.5 * (tab[i].data()[q] + tab[i + 1].data()[q]);
            return out;
        };
        midA = mid_of(s.coeffs.A, nn);
        midB = mid_of(s.coeffs.B, nm);
        midb = mid_of(s.coeffs.b, n);
        for (int j = 0; j < d; ++j) {
            midC.push_back(mid_of(s.coeffs.C[j], nn));
            midD.push_back(mid_of(s.coeffs.D[j], nm));
            midsig.push_back(mid_of(s.coeffs.sigma[j], n));
        }
        for (int k = 0; k < K; ++k) {
            midE.push_back(mid_of(s.coeffs.E[k], nn));
            midF.push_back(mid_of(s.coeffs.F[k], nm));
            midc.push_back(mid_of(s.coeffs.c[k], n));
        }
    }

    int state_len() const { return 3 * nn + n; }
};

// Coefficient pointers for one RK4 stage.
struct Stage {
    const double* A = nullptr;
    const double* B = nullptr;
    const double* b = nullptr;
    std::vector<const double*> C, D, sig, E, F, c;
    const double* Q = nullptr;
    const double* Qb = nullptr;
    const double* Psi = nullptr;
    const double* psi = nullptr;

    void size_for(const FlowContext& cx) {
        C.resize(cx.d); D.resize(cx.d); sig.resize(cx.d);
        E.resize(cx.K); F.resize(cx.K); c.resize(cx.K);
    }
};

void stage_at_node(const FlowContext& cx, int i, Stage& st) {
    st.A = cx.spec.coeffs.A[i].data();
    st.B = cx.spec.coeffs.B[i].data();
    st.b = cx.spec.coeffs.b[i].data();
    for (int j = 0; j < cx.d; ++j) {
        st.C[j] = cx.spec.coeffs.C[j][i].data();
        st.D[j] = cx.spec.coeffs.D[j][i].data();
        st.sig[j] = cx.spec.coeffs.sigma[j][i].data();
    }
    for (int k = 0; k < cx.K; ++k) {
        st.E[k] = cx.spec.coeffs.E[k][i].data();
        st.F[k] = cx.spec.coeffs.F[k][i].data();
        st.c[k] = cx.spec.coeffs.c[k][i].data();
    }
}

void stage_at_mid(const FlowContext& cx, int j, Stage& st) {
    st.A = cx.midA.data() + static_cast<std::size_t>(j) * cx.nn;
    st.B = cx.midB.data() + static_cast<std::size_t>(j) * cx.nm;
    st.b = cx.midb.data() + static_cast<std::size_t>(j) * cx.n;
    for (int q = 0; q < cx.d; ++q) {
        st.C[q] = cx.midC[q].data() + static_cast<std::size_t>(j) * cx.nn;
        st.D[q] = cx.midD[q].data() + static_cast<std::size_t>(j) * cx.nm;
        st.sig[q] = cx.midsig[q].data() + static_cast<std::size_t>(j) * cx.n;
    }
    for (int q = 0; q < cx.K; ++q) {
        st.E[q] = cx.midE[q].data() + static_cast<std::size_t>(j) * cx.nn;
        st.F[q] = cx.midF[q].data() + static_cast<std::size_t>(j) * cx.nm;
        st.c[q] = cx.midc[q].data() + static_cast<std::size_t>(j) * cx.n;
    }
}

// Scratch buffers for one row integration.
struct RowWork {
    std::vector<double> k1, k2, k3, k4, ytmp;
    std::vector<double> W;        // n x m accumulator
    std::vector<double> T1, T2;   // n x n / n x m temps
    std::vector<double> v1, v2;   // n temps
    std::vector<double> midQ, midQb, midPsi, midpsi;
    Stage st;

    explicit RowWork(const FlowContext& cx) {
        const int L = cx.state_len();
        k1.resize(L); k2.resize(L); k3.resize(L); k4.resize(L); ytmp.resize(L);
        W.resize(cx.nm);
        T1.resize(std::max(cx.nn, cx.nm));
        T2.resize(std::max(cx.nn, cx.nm));
        v1.resize(cx.n);
        v2.resize(cx.n);
        midQ.resize(cx.nn);
        midQb.resize(cx.nn);
        midPsi.resize(cx.mn);
        midpsi.resize(cx.m);
        st.size_for(cx);
    }
};

// Right-hand side of the flow system for fixed row time t, evaluated at one
// stage. State layout: [M | Mbar | Upsilon | phi].
void flow_rhs(const FlowContext& cx, const Stage& st, const double* y,
              double* dy, RowWork& w) {
    const int n = cx.n, m = cx.m, nn = cx.nn, nm = cx.nm;
    const double* M = y;
    const double* Mb = y + nn;
    const double* U = y + 2 * nn;
    const double* ph = y + 3 * nn;
    double* dM = dy;
    double* dMb = dy + nn;
    double* dU = dy + 2 * nn;
    double* dph = dy + 3 * nn;

    // M equation
    set_zero(dM, nn);
    mm_nn(dM, M, st.A, n, n, n, 1.0);
    mm_tn(dM, st.A, M, n, n, n, 1.0);
    set_zero(w.W.data(), nm);
    mm_nn(w.W.data(), M, st.B, n, n, m, 1.0);
    for (int j = 0; j < cx.d; ++j) {
        set_zero(w.T1.data(), nn);
        mm_nn(w.T1.data(), M, st.C[j], n, n, n, 1.0);
        mm_tn(dM, st.C[j], w.T1.data(), n, n, n, 1.0);
        set_zero(w.T2.data(), nm);
        mm_nn(w.T2.data(), M, st.D[j], n, n, m, 1.0);
        mm_tn(w.W.data(), st.C[j], w.T2.data(), n, n, m, 1.0);
    }
    for (int k = 0; k < cx.K; ++k) {
        const double th = cx.theta[k];
        if (th == 0.0) continue;
        set_zero(w.T1.data(), nn);
        mm_nn(w.T1.data(), M, st.E[k], n, n, n, 1.0);
        mm_tn(dM, st.E[k], w.T1.data(), n, n, n, th);
        set_zero(w.T2.data(), nm);
        mm_nn(w.T2.data(), M, st.F[k], n, n, m, 1.0);
        mm_tn(w.W.data(), st.E[k], w.T2.data(), n, n, m, th);
    }
    mm_nn(dM, w.W.data(), st.Psi, n, m, n, -1.0);
    axpy(dM, st.Q, nn, 1.0);
    for (int q = 0; q < nn; ++q) dM[q] = -dM[q];

    // Mbar equation
    set_zero(dMb, nn);
    mm_nn(dMb, Mb, st.A, n, n, n, 1.0);
    mm_tn(dMb, st.A, Mb, n, n, n, 1.0);
    set_zero(w.T2.data(), nm);
    mm_nn(w.T2.data(), Mb, st.B, n, n, m, 1.0);
    mm_nn(dMb, w.T2.data(), st.Psi, n, m, n, -1.0);
    axpy(dMb, st.Qb, nn, 1.0);
    for (int q = 0; q < nn; ++q) dMb[q] = -dMb[q];

    // Upsilon equation (decoupled, linear)
    set_zero(dU, nn);
    mm_tn(dU, st.A, U, n, n, n, -1.0);

    // phi equation
    set_zero(dph, n);
    for (int q = 0; q < n; ++q) w.v1[q] = st.b[q];
    mv_n(w.v1.data(), st.B, st.psi, n, m, -1.0);
    for (int q = 0; q < nn; ++q) w.T1[q] = M[q] + Mb[q];
    mv_n(dph, w.T1.data(), w.v1.data(), n, n, 1.0);
    mv_t(dph, st.A, ph, n, n, 1.0);
    for (int j = 0; j < cx.d; ++j) {
        for (int q = 0; q < n; ++q) w.v1[q] = st.sig[j][q];
        mv_n(w.v1.data(), st.D[j], st.psi, n, m, -1.0);
        set_zero(w.v2.data(), n);
        mv_n(w.v2.data(), M, w.v1.data(), n, n, 1.0);
        mv_t(dph, st.C[j], w.v2.data(), n, n, 1.0);
    }
    for (int k = 0; k < cx.K; ++k) {
        const double th = cx.theta[k];
        if (th == 0.0) continue;
        for (int q = 0; q < n; ++q) w.v1[q] = st.c[k][q];
        mv_n(w.v1.data(), st.F[k], st.psi, n, m, -1.0);
        set_zero(w.v2.data(), n);
        mv_n(w.v2.data(), M, w.v1.data(), n, n, 1.0);
        mv_t(dph, st.E[k], w.v2.data(), n, n, th);
    }
    for (int q = 0; q < n; ++q) dph[q] = -dph[q];
}

// One backward RK4 step across [s_j, s_{j+1}] for row i: y at s_{j+1} in,
// y at s_j out. Gains are read from the node arrays and interpolated
// linearly at the midpoint.
void rk4_row_step(const FlowContext& cx, int i, int j, const double* Psi,
                  const double* psi, const double* y_in, double* y_out,
                  RowWork& w) {
    const int L = cx.state_len();
    const double H = -cx.h;
    const int mn = cx.mn, m = cx.m;

    Stage& st = w.st;
    const double* QL = cx.spec.costs.Q.at(i, j);
    const double* QR = cx.spec.costs.Q.at(i, j + 1);
    const double* QbL = cx.spec.costs.Qbar.at(i, j);
    const double* QbR = cx.spec.costs.Qbar.at(i, j + 1);
    for (int q = 0; q < cx.nn; ++q) {
        w.midQ[q] = 0.5 * (QL[q] + QR[q]);
        w.midQb[q] = 0.5 * (QbL[q] + QbR[q]);
    }
    const double* PsiL = Psi + static_cast<std::size_t>(j) * mn;
    const double* PsiR = Psi + static_cast<std::size_t>(j + 1) * mn;
    const double* psiL = psi + static_cast<std::size_t>(j) * m;
    const double* psiR = psi + static_cast<std::size_t>(j + 1) * m;
    for (int q = 0; q < mn; ++q) w.midPsi[q] = 0.5 * (PsiL[q] + PsiR[q]);
    for (int q = 0; q < m; ++q) w.midpsi[q] = 0.5 * (psiL[q] + psiR[q]);

    // k1 at s_{j+1}
    stage_at_node(cx, j + 1, st);
    st.Q = QR; st.Qb = QbR; st.Psi = PsiR; st.psi = psiR;
    flow_rhs(cx, st, y_in, w.k1.data(), w);

    // k2, k3 at the midpoint
    stage_at_mid(cx, j, st);
    st.Q = w.midQ.data(); st.Qb = w.midQb.data();
    st.Psi = w.midPsi.data(); st.psi = w.midpsi.data();
    for (int q = 0; q < L; ++q) w.ytmp[q] = y_in[q] + 0.5 * H * w.k1[q];
    flow_rhs(cx, st, w.ytmp.data(), w.k2.data(), w);
    for (int q = 0; q < L; ++q) w.ytmp[q] = y_in[q] + 0.5 * H * w.k2[q];
    flow_rhs(cx, st, w.ytmp.data(), w.k3.data(), w);

    // k4 at s_j
    stage_at_node(cx, j, st);
    st.Q = QL; st.Qb = QbL;
    st.Psi = PsiL; st.psi = psiL;
    for (int q = 0; q < L; ++q) w.ytmp[q] = y_in[q] + H * w.k3[q];
    flow_rhs(cx, st, w.ytmp.data(), w.k4.data(), w);

    for (int q = 0; q < L; ++q)
        y_out[q] = y_in[q] +
                   H / 6.0 * (w.k1[q] + 2.0 * w.k2[q] + 2.0 * w.k3[q] + w.k4[q]);
}

// Gain weight S(t_i) = R(t_i,t_i) + sum_j D_j^T M D_j + sum_k F_k^T M F_k th_k
// for the candidate diagonal M; the gate rejects ill-conditioned weights.
ThetaResult gate_theta(const ProblemSpec& spec, int i, const Eigen::MatrixXd& M,
                       double cond_limit) {
    Eigen::MatrixXd S = spec.costs.R.mat(i, i);
    for (int j = 0; j < spec.d; ++j)
        S += spec.coeffs.D[j][i].transpose() * M * spec.coeffs.D[j][i];
    for (int k = 0; k < spec.jumps.count(); ++k)
        S += spec.jumps.intensities[k] * spec.coeffs.F[k][i].transpose() * M *
             spec.coeffs.F[k][i];

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(S);
    const double smax = svd.singularValues().maxCoeff();
    const double smin = svd.singularValues().minCoeff();
    const double cond = (smin <= 0.0 || smax <= 0.0)
                            ? std::numeric_limits<double>::infinity()
                            : smax / smin;
    if (!(cond <= cond_limit))
        throw SolverError("theta gate: cond(S) = " + std::to_string(cond) +
                          " at node " + std::to_string(i) +
                          " (t = " + std::to_string(spec.grid.node(i)) + ")");
    return {S.inverse(), cond};
}

struct GainAssembly {
    Eigen::MatrixXd Psi;
    Eigen::VectorXd psi;
    double cond;
};

// Gains at node i from candidate diagonal values. Throws on gate failure.
GainAssembly assemble_gains(const ProblemSpec& spec, int i,
                            const Eigen::MatrixXd& M, const Eigen::MatrixXd& Mb,
                            const Eigen::MatrixXd& U, const Eigen::VectorXd& ph,
                            double cond_limit) {
    const int K = spec.jumps.count();
    ThetaResult th = gate_theta(spec, i, M, cond_limit);

    Eigen::MatrixXd rhsPsi = spec.coeffs.B[i].transpose() * (M + Mb + U);
    Eigen::VectorXd rhspsi = spec.coeffs.B[i].transpose() * ph;
    for (int j = 0; j < spec.d; ++j) {
        rhsPsi += spec.coeffs.D[j][i].transpose() * M * spec.coeffs.C[j][i];
        rhspsi += spec.coeffs.D[j][i].transpose() * M * spec.coeffs.sigma[j][i];
    }
    for (int k = 0; k < K; ++k) {
        const double lam = spec.jumps.intensities[k];
        rhsPsi += lam * spec.coeffs.F[k][i].transpose() * M * spec.coeffs.E[k][i];
        rhspsi += lam * spec.coeffs.F[k][i].transpose() * M * spec.coeffs.c[k][i];
    }
    return {th.theta * rhsPsi, th.theta * rhspsi, th.cond};
}

struct DiagState {
    Eigen::MatrixXd M, Mb, U;
    Eigen::VectorXd ph;
};

DiagState terminal_diag(const ProblemSpec& spec, int i) {
    return {spec.costs.G[i], spec.costs.Gbar[i], spec.costs.mu1[i],
            spec.costs.mu2[i]};
}

void pack_state(const DiagState& s, double* y, int nn, int n) {
    for (int q = 0; q < nn; ++q) y[q] = s.M.data()[q];
    for (int q = 0; q < nn; ++q) y[nn + q] = s.Mb.data()[q];
    for (int q = 0; q < nn; ++q) y[2 * nn + q] = s.U.data()[q];
    for (int q = 0; q < n; ++q) y[3 * nn + q] = s.ph[q];
}

DiagState unpack_state(const double* y, int n) {
    const int nn = n * n;
    DiagState s;
    s.M = Eigen::Map<const Eigen::MatrixXd>(y, n, n);
    s.Mb = Eigen::Map<const Eigen::MatrixXd>(y + nn, n, n);
    s.U = Eigen::Map<const Eigen::MatrixXd>(y + 2 * nn, n, n);
    s.ph = Eigen::Map<const Eigen::VectorXd>(y + 3 * nn, n);
    return s;
}

void store_row_entry(FlowSolution& out, int i, int j, const double* y, int n) {
    const int nn = n * n;
    for (int q = 0; q < nn; ++q) out.M.at(i, j)[q] = y[q];
    for (int q = 0; q < nn; ++q) out.Mbar.at(i, j)[q] = y[nn + q];
    for (int q = 0; q < nn; ++q) out.Upsilon.at(i, j)[q] = y[2 * nn + q];
    for (int q = 0; q < n; ++q) out.phi.at(i, j)[q] = y[3 * nn + q];
}

void check_row_finite(const double* y, int len, int i, int j) {
    for (int q = 0; q < len; ++q)
        if (!std::isfinite(y[q]))
            throw SolverError("flow solve: non-finite value in row " +
                              std::to_string(i) + " at node " + std::to_string(j));
}

FlowSolution make_empty_solution(const ProblemSpec& spec) {
    FlowSolution out{
        TriangularField(spec.grid, spec.n, spec.n),
        TriangularField(spec.grid, spec.n, spec.n),
        TriangularField(spec.grid, spec.n, spec.n),
        TriangularField(spec.grid, spec.n, 1),
        {}};
    out.diagnostics.experimental = spec.n > 1;
    return out;
}

void write_gain_slot(std::vector<double>& Psi, std::vector<double>& psi,
                     int i, const GainAssembly& g, int mn, int m) {
    for (int q = 0; q < mn; ++q) Psi[static_cast<std::size_t>(i) * mn + q] = g.Psi.data()[q];
    for (int q = 0; q < m; ++q) psi[static_cast<std::size_t>(i) * m + q] = g.psi[q];
}

FeedbackLaw gains_to_law(const ProblemSpec& spec, const std::vector<double>& Psi,
                         const std::vector<double>& psi) {
    FeedbackLaw law;
    law.grid = spec.grid;
    const int np = spec.grid.size();
    law.Psi.resize(np);
    law.psi.resize(np);
    for (int i = 0; i < np; ++i) {
        law.Psi[i] = Eigen::Map<const Eigen::MatrixXd>(
            Psi.data() + static_cast<std::size_t>(i) * spec.m * spec.n, spec.m, spec.n);
        law.psi[i] = Eigen::Map<const Eigen::VectorXd>(
            psi.data() + static_cast<std::size_t>(i) * spec.m, spec.m);
    }
    return law;
}

} // namespace

ThetaResult theta_matrix(const ProblemSpec& spec, int t_index,
                         const Eigen::MatrixXd& M_diag, double cond_limit) {
    if (t_index < 0 || t_index >= spec.grid.size())
        throw ConfigError("theta_matrix: node index out of range");
    return gate_theta(spec, t_index, M_diag, cond_limit);
}

SecondOrderField solve_second_order(const ProblemSpec& spec) {
    spec.validate();
    const FlowContext cx(spec);
    const int np = spec.grid.size();
    const int n = cx.n, nn = cx.nn;
    SecondOrderField out{TriangularField(spec.grid, n, n)};

    auto run_row = [&](int i) {
        std::vector<double> y(nn), ynext(nn), k1(nn), k2(nn), k3(nn), k4(nn),
            ytmp(nn), T1(nn), midQ(nn);
        // terminal condition P(T; t_i) = -G(t_i)
        for (int q = 0; q < nn; ++q) y[q] = -spec.costs.G[i].data()[q];
        for (int q = 0; q < nn; ++q) out.P.at(i, np - 1)[q] = y[q];

        Stage st;
        st.size_for(cx);
        auto rhs = [&](const Stage& s, const double* p, double* dp) {
            set_zero(dp, nn);
            mm_tn(dp, s.A, p, n, n, n, 1.0);
            mm_nn(dp, p, s.A, n, n, n, 1.0);
            for (int j = 0; j < cx.d; ++j) {
                set_zero(T1.data(), nn);
                mm_nn(T1.data(), p, s.C[j], n, n, n, 1.0);
                mm_tn(dp, s.C[j], T1.data(), n, n, n, 1.0);
            }
            for (int k = 0; k < cx.K; ++k) {
                const double th = cx.theta[k];
                if (th == 0.0) continue;
                set_zero(T1.data(), nn);
                mm_nn(T1.data(), p, s.E[k], n, n, n, 1.0);
                mm_tn(dp, s.E[k], T1.data(), n, n, n, th);
            }
            axpy(dp, s.Q, nn, -1.0);
            for (int q = 0; q < nn; ++q) dp[q] = -dp[q];
        };

        const double H = -cx.h;
        for (int j = np - 2; j >= i; --j) {
            const double* QL = spec.costs.Q.at(i, j);
            const double* QR = spec.costs.Q.at(i, j + 1);
            for (int q = 0; q < nn; ++q) midQ[q] = 0.5 * (QL[q] + QR[q]);

            stage_at_node(cx, j + 1, st);
            st.Q = QR;
            rhs(st, y.data(), k1.data());
            stage_at_mid(cx, j, st);
            st.Q = midQ.data();
            for (int q = 0; q < nn; ++q) ytmp[q] = y[q] + 0.5 * H * k1[q];
            rhs(st, ytmp.data(), k2.data());
            for (int q = 0; q < nn; ++q) ytmp[q] = y[q] + 0.5 * H * k2[q];
            rhs(st, ytmp.data(), k3.data());
            stage_at_node(cx, j, st);
            st.Q = QL;
            for (int q = 0; q < nn; ++q) ytmp[q] = y[q] + H * k3[q];
            rhs(st, ytmp.data(), k4.data());

            for (int q = 0; q < nn; ++q)
                ynext[q] = y[q] + H / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]);
            // keep the field symmetric step by step
            for (int r = 0; r < n; ++r)
                for (int col = 0; col < n; ++col) {
                    const double v =
                        0.5 * (ynext[col * n + r] + ynext[r * n + col]);
                    y[col * n + r] = v;
                    y[r * n + col] = v;
                }
            check_row_finite(y.data(), nn, i, j);
            for (int q = 0; q < nn; ++q) out.P.at(i, j)[q] = y[q];
        }
    };

#ifdef _OPENMP
    if (exec_mode() == ExecMode::OpenMP) {
        const int threads = exec_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads > 0 ? threads : omp_get_max_threads())
        for (int i = 0; i < np; ++i) run_row(i);
    } else
#endif
    {
        for (int i = 0; i < np; ++i) run_row(i);
    }
    return out;
}

FlowResult solve_flow_marching(const ProblemSpec& spec, const FlowOptions& opts) {
    spec.validate();
    const FlowContext cx(spec);
    const int np = spec.grid.size();
    const int n = cx.n, nn = cx.nn, L = cx.state_len();

    FlowSolution out = make_empty_solution(spec);
    out.diagnostics.theta_cond.assign(np, 0.0);
    out.diagnostics.corrector_iters.assign(np, 0);

    // Gate pre-check: with no control in the noise terms S(t) = R(t,t) is
    // independent of the solution, so all failing nodes are known up front.
    bool has_noise_control = false;
    for (int j = 0; j < cx.d && !has_noise_control; ++j)
        for (int i = 0; i < np && !has_noise_control; ++i)
            if (spec.coeffs.D[j][i].lpNorm<Eigen::Infinity>() > 0.0)
                has_noise_control = true;
    for (int k = 0; k < cx.K && !has_noise_control; ++k)
        for (int i = 0; i < np && !has_noise_control; ++i)
            if (spec.coeffs.F[k][i].lpNorm<Eigen::Infinity>() > 0.0)
                has_noise_control = true;
    if (!has_noise_control) {
        std::string bad;
        int nbad = 0;
        for (int i = 0; i < np; ++i) {
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(spec.costs.R.mat(i, i));
            const double smax = svd.singularValues().maxCoeff();
            const double smin = svd.singularValues().minCoeff();
            if (smin <= 0.0 || smax / smin > opts.theta_cond_limit) {
                if (nbad < 8) bad += (nbad ? ", " : "") + std::to_string(i);
                ++nbad;
            }
        }
        if (nbad > 0)
            throw SolverError("theta gate: R(t,t) singular to tolerance at " +
                              std::to_string(nbad) + " node(s): " + bad +
                              (nbad > 8 ? ", ..." : ""));
    }

    std::vector<double> Psi(static_cast<std::size_t>(np) * cx.mn, 0.0);
    std::vector<double> psi(static_cast<std::size_t>(np) * cx.m, 0.0);
    std::vector<DiagState> diag(np);

    // Terminal node: diagonal equals the terminal data.
    diag[np - 1] = terminal_diag(spec, np - 1);
    {
        GainAssembly g = assemble_gains(spec, np - 1, diag[np - 1].M,
                                        diag[np - 1].Mb, diag[np - 1].U,
                                        diag[np - 1].ph, opts.theta_cond_limit);
        write_gain_slot(Psi, psi, np - 1, g, cx.mn, cx.m);
        out.diagnostics.theta_cond[np - 1] = g.cond;
    }
    {
        std::vector<double> y(L);
        pack_state(diag[np - 1], y.data(), nn, n);
        store_row_entry(out, np - 1, np - 1, y.data(), n);
    }

    RowWork w(cx);
    std::vector<double> y(L), ynext(L), yterm(L), y_ip1(L);

    for (int i = np - 2; i >= 0; --i) {
        // (a) predictor: linear extrapolation from the two nearest diagonals
        DiagState guess;
        if (i == np - 2) {
            guess = diag[i + 1];
        } else {
            guess.M = 2.0 * diag[i + 1].M - diag[i + 2].M;
            guess.Mb = 2.0 * diag[i + 1].Mb - diag[i + 2].Mb;
            guess.U = 2.0 * diag[i + 1].U - diag[i + 2].U;
            guess.ph = 2.0 * diag[i + 1].ph - diag[i + 2].ph;
        }

        GainAssembly g = assemble_gains(spec, i, guess.M, guess.Mb, guess.U,
                                        guess.ph, opts.theta_cond_limit);
        write_gain_slot(Psi, psi, i, g, cx.mn, cx.m);

        // (c) integrate the whole row backward from the terminal data
        DiagState term = terminal_diag(spec, i);
        pack_state(term, yterm.data(), nn, n);
        store_row_entry(out, i, np - 1, yterm.data(), n);
        for (int q = 0; q < L; ++q) y[q] = yterm[q];
        for (int j = np - 2; j >= i; --j) {
            rk4_row_step(cx, i, j, Psi.data(), psi.data(), y.data(),
                         ynext.data(), w);
            std::swap(y, ynext);
            check_row_finite(y.data(), L, i, j);
            store_row_entry(out, i, j, y.data(), n);
            if (j == i + 1)
                for (int q = 0; q < L; ++q) y_ip1[q] = y[q];
        }
        if (i + 1 == np - 1)
            for (int q = 0; q < L; ++q) y_ip1[q] = yterm[q];

        // (d) corrector on the diagonal value
        int iters = 0;
        DiagState cand = unpack_state(y.data(), n);
        while (true) {
            double num = 0.0, den = 1.0;
            num = std::max(num, (cand.M - guess.M).lpNorm<Eigen::Infinity>());
            num = std::max(num, (cand.Mb - guess.Mb).lpNorm<Eigen::Infinity>());
            num = std::max(num, (cand.U - guess.U).lpNorm<Eigen::Infinity>());
            num = std::max(num, (cand.ph - guess.ph).lpNorm<Eigen::Infinity>());
            den += std::max({cand.M.lpNorm<Eigen::Infinity>(),
                             cand.Mb.lpNorm<Eigen::Infinity>(),
                             cand.U.lpNorm<Eigen::Infinity>(),
                             cand.ph.lpNorm<Eigen::Infinity>()});
            if (num <= opts.corrector_tol * den) break;
            if (++iters > opts.corrector_max_iter)
                throw SolverError(
                    "flow marching: corrector failed to converge at node " +
                    std::to_string(i) + " (last change " + std::to_string(num) +
                    ")");
            guess = cand;
            g = assemble_gains(spec, i, guess.M, guess.Mb, guess.U, guess.ph,
                               opts.theta_cond_limit);
            write_gain_slot(Psi, psi, i, g, cx.mn, cx.m);
            rk4_row_step(cx, i, i, Psi.data(), psi.data(), y_ip1.data(),
                         ynext.data(), w);
            check_row_finite(ynext.data(), L, i, i);
            store_row_entry(out, i, i, ynext.data(), n);
            cand = unpack_state(ynext.data(), n);
        }
        diag[i] = cand;
        // pin the law to the stored diagonal so law and fields are exactly
        // consistent
        g = assemble_gains(spec, i, cand.M, cand.Mb, cand.U, cand.ph,
                           opts.theta_cond_limit);
        write_gain_slot(Psi, psi, i, g, cx.mn, cx.m);
        out.diagnostics.theta_cond[i] = g.cond;
        out.diagnostics.corrector_iters[i] = iters;
    }

    return {std::move(out), gains_to_law(spec, Psi, psi)};
}

PicardResult solve_flow_picard(const ProblemSpec& spec, double beta, double tol,
                               int max_iter, const FlowOptions& opts) {
    spec.validate();
    if (!(beta > 0.0) || !(tol > 0.0) || max_iter < 1)
        throw ConfigError("picard: beta, tol must be positive and max_iter >= 1");
    const FlowContext cx(spec);
    const int np = spec.grid.size();
    const int n = cx.n, nn = cx.nn, L = cx.state_len();
    const double T = spec.grid.horizon();

    // Initial guess: terminal data held constant along the diagonal.
    std::vector<DiagState> diag(np), fresh(np);
    for (int i = 0; i < np; ++i) diag[i] = terminal_diag(spec, i);

    std::vector<double> Psi(static_cast<std::size_t>(np) * cx.mn, 0.0);
    std::vector<double> psi(static_cast<std::size_t>(np) * cx.m, 0.0);
    std::vector<double> conds(np, 0.0);

    auto build_gains = [&](const std::vector<DiagState>& dg) {
        for (int i = 0; i < np; ++i) {
            GainAssembly g = assemble_gains(spec, i, dg[i].M, dg[i].Mb, dg[i].U,
                                            dg[i].ph, opts.theta_cond_limit);
            write_gain_slot(Psi, psi, i, g, cx.mn, cx.m);
            conds[i] = g.cond;
        }
    };

    // Diagonal map: integrate every row down to its own diagonal with the
    // current gains; rows are independent given the gains.
    auto sweep_diag = [&](std::vector<DiagState>& outdiag) {
        auto run_row = [&](int i) {
            RowWork w(cx);
            std::vector<double> y(L), ynext(L);
            DiagState term = terminal_diag(spec, i);
            pack_state(term, y.data(), nn, n);
            for (int j = np - 2; j >= i; --j) {
                rk4_row_step(cx, i, j, Psi.data(), psi.data(), y.data(),
                             ynext.data(), w);
                std::swap(y, ynext);
                check_row_finite(y.data(), L, i, j);
            }
            outdiag[i] = unpack_state(y.data(), n);
        };
#ifdef _OPENMP
        if (exec_mode() == ExecMode::OpenMP) {
            const int threads = exec_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads > 0 ? threads : omp_get_max_threads())
            for (int i = 0; i < np; ++i) run_row(i);
        } else
#endif
        {
            for (int i = 0; i < np; ++i) run_row(i);
        }
    };

    auto update_norm = [&](const std::vector<DiagState>& a,
                           const std::vector<DiagState>& b) {
        double worst = 0.0;
        for (int i = 0; i < np; ++i) {
            const double wgt = std::exp(-beta * (T - spec.grid.node(i)));
            double diff = (a[i].M - b[i].M).lpNorm<Eigen::Infinity>();
            diff = std::max(diff, (a[i].Mb - b[i].Mb).lpNorm<Eigen::Infinity>());
            diff = std::max(diff, (a[i].U - b[i].U).lpNorm<Eigen::Infinity>());
            diff = std::max(diff, (a[i].ph - b[i].ph).lpNorm<Eigen::Infinity>());
            worst = std::max(worst, wgt * diff);
        }
        return worst;
    };

    std::vector<double> trace;
    bool reached = false;
    double prev = std::numeric_limits<double>::infinity();
    int polish = 0;
    for (int iter = 0; iter < max_iter; ++iter) {
        build_gains(diag);
        sweep_diag(fresh);
        const double norm = update_norm(fresh, diag);
        if (reached) {
            // geometric-tail polish: accept only while still halving
            if (!(norm < 0.5 * prev) || ++polish > 5) break;
        }
        trace.push_back(norm);
        diag.swap(fresh);
        if (!reached && norm < tol) {
            reached = true;
            if (norm == 0.0) break;
        }
        prev = norm;
    }
    if (!reached) {
        const double last = trace.empty() ? 0.0 : trace.back();
        const double before =
            trace.size() > 1 ? trace[trace.size() - 2]
                             : std::numeric_limits<double>::infinity();
        throw SolverError("picard: max_iter exceeded (last update norms " +
                          std::to_string(before) + ", " + std::to_string(last) +
                          ")");
    }

    // Final full sweep with the converged gains, then read the law off the
    // produced fields so the pair is exactly self-consistent.
    build_gains(diag);
    FlowSolution out = make_empty_solution(spec);
    out.diagnostics.theta_cond = conds;
    out.diagnostics.corrector_iters.assign(np, 0);
    {
        auto run_row = [&](int i) {
            RowWork w(cx);
            std::vector<double> y(L), ynext(L);
            DiagState term = terminal_diag(spec, i);
            pack_state(term, y.data(), nn, n);
            store_row_entry(out, i, np - 1, y.data(), n);
            for (int j = np - 2; j >= i; --j) {
                rk4_row_step(cx, i, j, Psi.data(), psi.data(), y.data(),
                             ynext.data(), w);
                std::swap(y, ynext);
                check_row_finite(y.data(), L, i, j);
                store_row_entry(out, i, j, y.data(), n);
            }
        };
#ifdef _OPENMP
        if (exec_mode() == ExecMode::OpenMP) {
            const int threads = exec_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads > 0 ? threads : omp_get_max_threads())
            for (int i = 0; i < np; ++i) run_row(i);
        } else
#endif
        {
            for (int i = 0; i < np; ++i) run_row(i);
        }
    }
    for (int i = 0; i < np; ++i) {
        DiagState dg{out.M.diag(i), out.Mbar.diag(i), out.Upsilon.diag(i),
                     out.phi.mat(i, i).col(0)};
        GainAssembly g = assemble_gains(spec, i, dg.M, dg.Mb, dg.U, dg.ph,
                                        opts.theta_cond_limit);
        write_gain_slot(Psi, psi, i, g, cx.mn, cx.m);
        out.diagnostics.theta_cond[i] = g.cond;
    }
    out.diagnostics.picard_trace = trace;

    PicardResult res{std::move(out), gains_to_law(spec, Psi, psi), trace};
    return res;
}

std::vector<double> feedback_residual(const ProblemSpec& spec,
                                      const FlowSolution& flow,
                                      const FeedbackLaw& law) {
    if (flow.M.grid() != spec.grid || law.grid != spec.grid)
        throw ConfigError("feedback_residual: mismatched grids");
    const int np = spec.grid.size();
    std::vector<double> out(np);
    for (int i = 0; i < np; ++i) {
        GainAssembly g = assemble_gains(
            spec, i, flow.M.diag(i), flow.Mbar.diag(i), flow.Upsilon.diag(i),
            flow.phi.mat(i, i).col(0), std::numeric_limits<double>::infinity());
        out[i] = (law.Psi[i] - g.Psi).norm() + (law.psi[i] - g.psi).norm();
    }
    return out;
}

} // namespace tilq

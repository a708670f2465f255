#ifndef TILQ_DENSE_KERNELS_HPP
#define TILQ_DENSE_KERNELS_HPP

// Tiny column-major accumulate kernels for the ODE right-hand sides. The
// state dimensions here are small (n, m of order a few), so plain loops beat
// any dispatch overhead in the per-step hot path.

namespace tilq::kern {

// C(r x c) += s * A(r x p) * B(p x c)
inline void mm_nn(double* C, const double* A, const double* B, int r, int p,
                  int c, double s) {
    for (int j = 0; j < c; ++j)
        for (int k = 0; k < p; ++k) {
            const double bkj = s * B[j * p + k];
            const double* acol = A + k * r;
            double* ccol = C + j * r;
            for (int i = 0; i < r; ++i) ccol[i] += acol[i] * bkj;
        }
}

// C(r x c) += s * A^T * B, with A stored (p x r), B (p x c)
inline void mm_tn(double* C, const double* A, const double* B, int r, int p,
                  int c, double s) {
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) {
            const double* acol = A + i * p;
            const double* bcol = B + j * p;
            double acc = 0.0;
            for (int k = 0; k < p; ++k) acc += acol[k] * bcol[k];
            C[j * r + i] += s * acc;
        }
}

// y(r) += s * A(r x c) * x(c)
inline void mv_n(double* y, const double* A, const double* x, int r, int c,
                 double s) {
    for (int k = 0; k < c; ++k) {
        const double xk = s * x[k];
        const double* acol = A + k * r;
        for (int i = 0; i < r; ++i) y[i] += acol[i] * xk;
    }
}

// y(c) += s * A^T * x, with A stored (r x c), x(r)
inline void mv_t(double* y, const double* A, const double* x, int r, int c,
                 double s) {
    for (int k = 0; k < c; ++k) {
        const double* acol = A + k * r;
        double acc = 0.0;
        for (int i = 0; i < r; ++i) acc += acol[i] * x[i];
        y[k] += s * acc;
    }
}

inline void set_zero(double* p, int len) {
    for (int i = 0; i < len; ++i) p[i] = 0.0;
}

inline void axpy(double* y, const double* x, int len, double a) {
    for (int i = 0; i < len; ++i) y[i] += a * x[i];
}

} // namespace tilq::kern

#endif

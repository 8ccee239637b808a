#include "arlk/kernels.hpp"

#include <cmath>

namespace arlk::kernels {

namespace {

inline const double* row(const double* a, int lda, int i) { return a + static_cast<std::ptrdiff_t>(i) * lda; }

void gemm_scalar(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb,
                 double beta, double* c, int ldc) {
    for (int i = 0; i < m; ++i) {
        double* ci = c + static_cast<std::ptrdiff_t>(i) * ldc;
        if (beta == 0.0) {
            for (int j = 0; j < n; ++j) ci[j] = 0.0;
        } else if (beta != 1.0) {
            for (int j = 0; j < n; ++j) ci[j] *= beta;
        }
    }
    if (alpha == 0.0) return;

    if (!trans_a && !trans_b) {
        // C += alpha * A[i,p] * B[p,j]
        for (int i = 0; i < m; ++i) {
            const double* ai = row(a, lda, i);
            double* ci = c + static_cast<std::ptrdiff_t>(i) * ldc;
            for (int p = 0; p < k; ++p) {
                const double aip = alpha * ai[p];
                const double* bp = row(b, ldb, p);
                for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
            }
        }
    } else if (!trans_a && trans_b) {
        // C[i,j] += alpha * dot(A row i, B row j)
        for (int i = 0; i < m; ++i) {
            const double* ai = row(a, lda, i);
            double* ci = c + static_cast<std::ptrdiff_t>(i) * ldc;
            for (int j = 0; j < n; ++j) {
                const double* bj = row(b, ldb, j);
                double s = 0.0;
                for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
                ci[j] += alpha * s;
            }
        }
    } else if (trans_a && !trans_b) {
        // C += alpha * A[p,i] * B[p,j]
        for (int p = 0; p < k; ++p) {
            const double* ap = row(a, lda, p);
            const double* bp = row(b, ldb, p);
            for (int i = 0; i < m; ++i) {
                const double api = alpha * ap[i];
                double* ci = c + static_cast<std::ptrdiff_t>(i) * ldc;
                for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
            }
        }
    } else {
        for (int i = 0; i < m; ++i) {
            double* ci = c + static_cast<std::ptrdiff_t>(i) * ldc;
            for (int j = 0; j < n; ++j) {
                double s = 0.0;
                for (int p = 0; p < k; ++p) s += a[static_cast<std::ptrdiff_t>(p) * lda + i] * b[static_cast<std::ptrdiff_t>(j) * ldb + p];
                ci[j] += alpha * s;
            }
        }
    }
}

double dot_scalar(const double* x, const double* y, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

void axpy_scalar(double a, const double* x, double* y, int n) {
    for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

void lerp_scalar(double t, const double* x, double* y, int n) {
    const double u = 1.0 - t;
    for (int i = 0; i < n; ++i) y[i] = t * x[i] + u * y[i];
}

void add_scalar(const double* x, double* y, int n) {
    for (int i = 0; i < n; ++i) y[i] += x[i];
}

void scal_scalar(double a, double* x, int n) {
    for (int i = 0; i < n; ++i) x[i] *= a;
}

void tanh_bwd_scalar(const double* y, const double* dy, double* dx, int n) {
    for (int i = 0; i < n; ++i) dx[i] = dy[i] * (1.0 - y[i] * y[i]);
}

void sigmoid_bwd_scalar(const double* y, const double* dy, double* dx, int n) {
    for (int i = 0; i < n; ++i) dx[i] = dy[i] * y[i] * (1.0 - y[i]);
}

void adam_scalar(double* p, const double* g, double* m, double* v, int n,
                 double lr, double b1, double b2, double eps, double c1,
                 double c2) {
    for (int i = 0; i < n; ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        const double mhat = m[i] * c1;
        const double vhat = v[i] * c2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

}  // namespace

const Ops& scalar_ops() {
    static const Ops table = {
        gemm_scalar, dot_scalar,      axpy_scalar,        lerp_scalar,
        add_scalar,  scal_scalar,     tanh_bwd_scalar,    sigmoid_bwd_scalar,
        adam_scalar, "scalar",
    };
    return table;
}

void tanh_fwd(const double* x, double* y, int n) {
    for (int i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

void sigmoid_fwd(const double* x, double* y, int n) {
    for (int i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

}  // namespace arlk::kernels

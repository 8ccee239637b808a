// AVX2+FMA kernel variants. Compiled with -mavx2 -mfma on x86-64 only; the
// dispatcher checks CPU support at runtime before installing this table.

#include "arlk/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define ARLK_HAVE_AVX2_BUILD 1
#else
#define ARLK_HAVE_AVX2_BUILD 0
#endif

#if ARLK_HAVE_AVX2_BUILD

#include <immintrin.h>

#include <cmath>

namespace arlk::kernels {

namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot_avx2(const double* x, const double* y, int n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

void axpy_avx2(double a, const double* x, double* y, int n) {
    const __m256d va = _mm256_set1_pd(a);
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void lerp_avx2(double t, const double* x, double* y, int n) {
    const __m256d vt = _mm256_set1_pd(t);
    const __m256d vu = _mm256_set1_pd(1.0 - t);
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_mul_pd(vu, _mm256_loadu_pd(y + i));
        vy = _mm256_fmadd_pd(vt, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    const double u = 1.0 - t;
    for (; i < n; ++i) y[i] = t * x[i] + u * y[i];
}

void add_avx2(const double* x, double* y, int n) {
    int i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) y[i] += x[i];
}

void scal_avx2(double a, double* x, int n) {
    const __m256d va = _mm256_set1_pd(a);
    int i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) x[i] *= a;
}

void tanh_bwd_avx2(const double* y, const double* dy, double* dx, int n) {
    const __m256d one = _mm256_set1_pd(1.0);
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        __m256d d = _mm256_fnmadd_pd(vy, vy, one);  // 1 - y*y
        _mm256_storeu_pd(dx + i, _mm256_mul_pd(_mm256_loadu_pd(dy + i), d));
    }
    for (; i < n; ++i) dx[i] = dy[i] * (1.0 - y[i] * y[i]);
}

void sigmoid_bwd_avx2(const double* y, const double* dy, double* dx, int n) {
    const __m256d one = _mm256_set1_pd(1.0);
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        __m256d d = _mm256_mul_pd(vy, _mm256_sub_pd(one, vy));
        _mm256_storeu_pd(dx + i, _mm256_mul_pd(_mm256_loadu_pd(dy + i), d));
    }
    for (; i < n; ++i) dx[i] = dy[i] * y[i] * (1.0 - y[i]);
}

void adam_avx2(double* p, const double* g, double* m, double* v, int n,
               double lr, double b1, double b2, double eps, double c1,
               double c2) {
    const __m256d vb1 = _mm256_set1_pd(b1);
    const __m256d vb2 = _mm256_set1_pd(b2);
    const __m256d vnb1 = _mm256_set1_pd(1.0 - b1);
    const __m256d vnb2 = _mm256_set1_pd(1.0 - b2);
    const __m256d vc1 = _mm256_set1_pd(c1);
    const __m256d vc2 = _mm256_set1_pd(c2);
    const __m256d veps = _mm256_set1_pd(eps);
    const __m256d vlr = _mm256_set1_pd(lr);
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vg = _mm256_loadu_pd(g + i);
        __m256d vm = _mm256_fmadd_pd(vnb1, vg, _mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)));
        __m256d vv = _mm256_fmadd_pd(vnb2, _mm256_mul_pd(vg, vg), _mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)));
        _mm256_storeu_pd(m + i, vm);
        _mm256_storeu_pd(v + i, vv);
        __m256d mhat = _mm256_mul_pd(vm, vc1);
        __m256d vhat = _mm256_mul_pd(vv, vc2);
        __m256d den = _mm256_add_pd(_mm256_sqrt_pd(vhat), veps);
        __m256d upd = _mm256_div_pd(_mm256_mul_pd(vlr, mhat), den);
        _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), upd));
    }
    for (; i < n; ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        p[i] -= lr * (m[i] * c1) / (std::sqrt(v[i] * c2) + eps);
    }
}

// Row-major gemm. The nn/tn cases stream 4-wide down C rows with a broadcast
// multiplier; nt reduces row-against-row with dot. Good enough single-thread
// throughput for the layer sizes used here (k, n in the tens to few thousands).
void gemm_avx2(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
               const double* a, int lda, const double* b, int ldb, double beta,
               double* c, int ldc) {
    for (int i = 0; i < m; ++i) {
        double* ci = c + static_cast<std::ptrdiff_t>(i) * ldc;
        if (beta == 0.0) {
            for (int j = 0; j < n; ++j) ci[j] = 0.0;
        } else if (beta != 1.0) {
            scal_avx2(beta, ci, n);
        }
    }
    if (alpha == 0.0) return;

    if (!trans_a && !trans_b) {
        for (int i = 0; i < m; ++i) {
            const double* ai = a + static_cast<std::ptrdiff_t>(i) * lda;
            double* ci = c + static_cast<std::ptrdiff_t>(i) * ldc;
            int p = 0;
            for (; p + 2 <= k; p += 2) {
                const __m256d a0 = _mm256_set1_pd(alpha * ai[p]);
                const __m256d a1 = _mm256_set1_pd(alpha * ai[p + 1]);
                const double* b0 = b + static_cast<std::ptrdiff_t>(p) * ldb;
                const double* b1 = b0 + ldb;
                int j = 0;
                for (; j + 4 <= n; j += 4) {
                    __m256d vc = _mm256_loadu_pd(ci + j);
                    vc = _mm256_fmadd_pd(a0, _mm256_loadu_pd(b0 + j), vc);
                    vc = _mm256_fmadd_pd(a1, _mm256_loadu_pd(b1 + j), vc);
                    _mm256_storeu_pd(ci + j, vc);
                }
                for (; j < n; ++j) ci[j] += alpha * (ai[p] * b0[j] + ai[p + 1] * b1[j]);
            }
            for (; p < k; ++p) {
                const double aip = alpha * ai[p];
                const double* bp = b + static_cast<std::ptrdiff_t>(p) * ldb;
                axpy_avx2(aip, bp, ci, n);
            }
        }
    } else if (!trans_a && trans_b) {
        for (int i = 0; i < m; ++i) {
            const double* ai = a + static_cast<std::ptrdiff_t>(i) * lda;
            double* ci = c + static_cast<std::ptrdiff_t>(i) * ldc;
            for (int j = 0; j < n; ++j)
                ci[j] += alpha * dot_avx2(ai, b + static_cast<std::ptrdiff_t>(j) * ldb, k);
        }
    } else if (trans_a && !trans_b) {
        for (int p = 0; p < k; ++p) {
            const double* ap = a + static_cast<std::ptrdiff_t>(p) * lda;
            const double* bp = b + static_cast<std::ptrdiff_t>(p) * ldb;
            for (int i = 0; i < m; ++i)
                axpy_avx2(alpha * ap[i], bp, c + static_cast<std::ptrdiff_t>(i) * ldc, n);
        }
    } else {
        for (int i = 0; i < m; ++i) {
            double* ci = c + static_cast<std::ptrdiff_t>(i) * ldc;
            for (int j = 0; j < n; ++j) {
                double s = 0.0;
                for (int p = 0; p < k; ++p)
                    s += a[static_cast<std::ptrdiff_t>(p) * lda + i] * b[static_cast<std::ptrdiff_t>(j) * ldb + p];
                ci[j] += alpha * s;
            }
        }
    }
}

}  // namespace

const Ops* avx2_table_impl() {
    static const Ops table = {
        gemm_avx2, dot_avx2,      axpy_avx2,        lerp_avx2, add_avx2,
        scal_avx2, tanh_bwd_avx2, sigmoid_bwd_avx2, adam_avx2, "avx2",
    };
    return &table;
}

}  // namespace arlk::kernels

#else

namespace arlk::kernels {
const Ops* avx2_table_impl() { return nullptr; }
}  // namespace arlk::kernels

#endif

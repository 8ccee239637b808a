#pragma once

#include <cstddef>

// Data-parallel inner loops used by the tensor/NN layer. Every kernel has a
// scalar reference implementation and (on x86-64 with AVX2+FMA) a vectorized
// variant; the active table is picked once at startup. Set ARLK_FORCE_SCALAR=1
// in the environment to pin the scalar path.
//
// All matrices are row-major, double precision.

namespace arlk::kernels {

struct Ops {
    // C = alpha * op(A) * op(B) + beta * C
    //   op(A): M x K, op(B): K x N, C: M x N
    // lda/ldb are the leading dimensions of the *stored* A and B.
    void (*gemm)(bool trans_a, bool trans_b, int m, int n, int k,
                 double alpha, const double* a, int lda, const double* b,
                 int ldb, double beta, double* c, int ldc);

    double (*dot)(const double* x, const double* y, int n);

    // y += a * x
    void (*axpy)(double a, const double* x, double* y, int n);

    // y = t * x + (1 - t) * y   (soft-update / lerp toward x)
    void (*lerp)(double t, const double* x, double* y, int n);

    // y += x
    void (*add)(const double* x, double* y, int n);

    // x *= a
    void (*scal)(double a, double* x, int n);

    // dx = dy * (1 - y*y)   (tanh backward from the forward output)
    void (*tanh_bwd)(const double* y, const double* dy, double* dx, int n);

    // dx = dy * y * (1 - y)   (sigmoid backward from the forward output)
    void (*sigmoid_bwd)(const double* y, const double* dy, double* dx, int n);

    // Bias-corrected Adam step. c1 = 1/(1-b1^t), c2 = 1/(1-b2^t) precomputed.
    void (*adam)(double* p, const double* g, double* m, double* v, int n,
                 double lr, double b1, double b2, double eps, double c1,
                 double c2);

    const char* name;
};

// Kernel table selected at startup (AVX2 when available, else scalar).
const Ops& ops();

// Reference implementations, always available. Tests compare these against
// the dispatched table.
const Ops& scalar_ops();

// AVX2 table, or nullptr when not compiled in / not supported by the CPU.
const Ops* avx2_ops();

bool avx2_supported();

// Elementwise transcendentals stay scalar in both tables so forward passes
// are bit-identical regardless of dispatch (libm tanh/exp).
void tanh_fwd(const double* x, double* y, int n);
void sigmoid_fwd(const double* x, double* y, int n);

}  // namespace arlk::kernels

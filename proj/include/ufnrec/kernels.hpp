#pragma once

#include <cstddef>
#include <utility>

// Compute kernels behind the encoder and evaluator. Each kernel has a plain
// serial implementation (the reference) and an OpenMP one. The OpenMP
// versions partition work so that every output element is produced by exactly
// one thread with the same inner accumulation order as the serial code, so
// results are bitwise identical to the reference for any thread count.

namespace ufnrec::kernels {

void set_threads(int n);
int threads();
bool parallel_enabled();

namespace serial {
// C[M x N] (+)= A[M x K] * B[K x N]
void gemm_nn(const double* A, const double* B, double* C, int M, int K, int N, bool acc);
// C[M x N] (+)= A[M x K] * B[N x K]^T
void gemm_nt(const double* A, const double* B, double* C, int M, int K, int N, bool acc);
// C[M x N] (+)= A[K x M]^T * B[K x N]
void gemm_tn(const double* A, const double* B, double* C, int M, int K, int N, bool acc);
// Row-wise layer norm: H[r] = (X[r] - mean) * rstd * g + b
void ln_forward(const double* X, const double* g, const double* b, double* H,
                double* mean, double* rstd, int R, int d, double eps);
// Accumulates into dX, dg, db.
void ln_backward(const double* X, const double* g, const double* mean, const double* rstd,
                 const double* dH, double* dX, double* dg, double* db, int R, int d);
// dst[keys[i]] += scale * w[i] * src[rows[i]] for i in [0, n); keys sorted ascending.
// w may be null (treated as all ones).
void segment_add(const int* keys, const int* rows, const double* w, size_t n,
                 const double* src, double* dst, int d, double scale);
}  // namespace serial

namespace omp {
void gemm_nn(const double* A, const double* B, double* C, int M, int K, int N, bool acc);
void gemm_nt(const double* A, const double* B, double* C, int M, int K, int N, bool acc);
void gemm_tn(const double* A, const double* B, double* C, int M, int K, int N, bool acc);
void ln_forward(const double* X, const double* g, const double* b, double* H,
                double* mean, double* rstd, int R, int d, double eps);
void ln_backward(const double* X, const double* g, const double* mean, const double* rstd,
                 const double* dH, double* dX, double* dg, double* db, int R, int d);
void segment_add(const int* keys, const int* rows, const double* w, size_t n,
                 const double* src, double* dst, int d, double scale);
}  // namespace omp

// Dispatchers: route to omp:: when more than one thread is configured.
void gemm_nn(const double* A, const double* B, double* C, int M, int K, int N, bool acc);
void gemm_nt(const double* A, const double* B, double* C, int M, int K, int N, bool acc);
void gemm_tn(const double* A, const double* B, double* C, int M, int K, int N, bool acc);
void ln_forward(const double* X, const double* g, const double* b, double* H,
                double* mean, double* rstd, int R, int d, double eps);
void ln_backward(const double* X, const double* g, const double* mean, const double* rstd,
                 const double* dH, double* dX, double* dg, double* db, int R, int d);
void segment_add(const int* keys, const int* rows, const double* w, size_t n,
                 const double* src, double* dst, int d, double scale);

// Parallel loop over independent work items (attention heads, eval users).
template <class F>
void par_for(int n, F&& f) {
    if (parallel_enabled()) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i) f(i);
    } else {
        for (int i = 0; i < n; ++i) f(i);
    }
}

}  // namespace ufnrec::kernels

#include "ufnrec/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ufnrec::kernels {

namespace {
std::atomic<int> g_threads{0};  // 0 = uninitialized

int default_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}
}  // namespace

void set_threads(int n) {
    n = std::max(1, n);
    g_threads.store(n);
#ifdef _OPENMP
    omp_set_num_threads(n);
#endif
}

int threads() {
    int n = g_threads.load();
    if (n == 0) {
        n = default_threads();
        g_threads.store(n);
    }
    return n;
}

bool parallel_enabled() {
#ifdef _OPENMP
    return threads() > 1;
#else
    return false;
#endif
}

// ---------------------------------------------------------------- serial ---

namespace serial {

void gemm_nn(const double* A, const double* B, double* C, int M, int K, int N, bool acc) {
    for (int i = 0; i < M; ++i) {
        double* c = C + static_cast<size_t>(i) * N;
        if (!acc) std::fill(c, c + N, 0.0);
        const double* a = A + static_cast<size_t>(i) * K;
        for (int k = 0; k < K; ++k) {
            const double aik = a[k];
            const double* b = B + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += aik * b[j];
        }
    }
}

void gemm_nt(const double* A, const double* B, double* C, int M, int K, int N, bool acc) {
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<size_t>(i) * K;
        double* c = C + static_cast<size_t>(i) * N;
        for (int j = 0; j < N; ++j) {
            const double* b = B + static_cast<size_t>(j) * K;
            double s = 0.0;
            for (int k = 0; k < K; ++k) s += a[k] * b[k];
            c[j] = acc ? c[j] + s : s;
        }
    }
}

void gemm_tn(const double* A, const double* B, double* C, int M, int K, int N, bool acc) {
    for (int i = 0; i < M; ++i) {
        for (int j = 0; j < N; ++j) {
            double s = 0.0;
            for (int k = 0; k < K; ++k)
                s += A[static_cast<size_t>(k) * M + i] * B[static_cast<size_t>(k) * N + j];
            double& c = C[static_cast<size_t>(i) * N + j];
            c = acc ? c + s : s;
        }
    }
}

namespace detail {

inline void ln_forward_row(const double* x, const double* g, const double* b, double* h,
                           double* mean, double* rstd, int d, double eps) {
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += x[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
        double c = x[j] - mu;
        var += c * c;
    }
    var /= d;
    double r = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j) h[j] = (x[j] - mu) * r * g[j] + b[j];
    *mean = mu;
    *rstd = r;
}

inline void ln_backward_row(const double* x, const double* g, double mean, double rstd,
                            const double* dh, double* dx, int d) {
    // xhat = (x - mean) * rstd; dxhat = dh * g
    double sum_dxhat = 0.0;
    double sum_dxhat_xhat = 0.0;
    for (int j = 0; j < d; ++j) {
        double xhat = (x[j] - mean) * rstd;
        double dxhat = dh[j] * g[j];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
    }
    double inv_d = 1.0 / d;
    for (int j = 0; j < d; ++j) {
        double xhat = (x[j] - mean) * rstd;
        double dxhat = dh[j] * g[j];
        dx[j] += rstd * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
    }
}

inline void ln_param_grad_col(const double* X, const double* mean, const double* rstd,
                              const double* dH, double* dg, double* db, int R, int d, int j) {
    double sg = 0.0, sb = 0.0;
    for (int r = 0; r < R; ++r) {
        size_t off = static_cast<size_t>(r) * d + j;
        double xhat = (X[off] - mean[r]) * rstd[r];
        sg += dH[off] * xhat;
        sb += dH[off];
    }
    dg[j] += sg;
    db[j] += sb;
}

inline void segment_add_range(const int* keys, const int* rows, const double* w, size_t lo,
                              size_t hi, const double* src, double* dst, int d, double scale) {
    for (size_t i = lo; i < hi; ++i) {
        const double* s = src + static_cast<size_t>(rows[i]) * d;
        double* t = dst + static_cast<size_t>(keys[i]) * d;
        double c = scale * (w ? w[i] : 1.0);
        for (int j = 0; j < d; ++j) t[j] += c * s[j];
    }
}

}  // namespace detail

void ln_forward(const double* X, const double* g, const double* b, double* H, double* mean,
                double* rstd, int R, int d, double eps) {
    for (int r = 0; r < R; ++r)
        detail::ln_forward_row(X + static_cast<size_t>(r) * d, g, b, H + static_cast<size_t>(r) * d,
                               mean + r, rstd + r, d, eps);
}

void ln_backward(const double* X, const double* g, const double* mean, const double* rstd,
                 const double* dH, double* dX, double* dg, double* db, int R, int d) {
    for (int r = 0; r < R; ++r)
        detail::ln_backward_row(X + static_cast<size_t>(r) * d, g, mean[r], rstd[r],
                                dH + static_cast<size_t>(r) * d, dX + static_cast<size_t>(r) * d, d);
    for (int j = 0; j < d; ++j) detail::ln_param_grad_col(X, mean, rstd, dH, dg, db, R, d, j);
}

void segment_add(const int* keys, const int* rows, const double* w, size_t n, const double* src,
                 double* dst, int d, double scale) {
    detail::segment_add_range(keys, rows, w, 0, n, src, dst, d, scale);
}

}  // namespace serial

// ------------------------------------------------------------------- omp ---

namespace omp {

void gemm_nn(const double* A, const double* B, double* C, int M, int K, int N, bool acc) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < M; ++i) {
        double* c = C + static_cast<size_t>(i) * N;
        if (!acc) std::fill(c, c + N, 0.0);
        const double* a = A + static_cast<size_t>(i) * K;
        for (int k = 0; k < K; ++k) {
            const double aik = a[k];
            const double* b = B + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += aik * b[j];
        }
    }
}

void gemm_nt(const double* A, const double* B, double* C, int M, int K, int N, bool acc) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<size_t>(i) * K;
        double* c = C + static_cast<size_t>(i) * N;
        for (int j = 0; j < N; ++j) {
            const double* b = B + static_cast<size_t>(j) * K;
            double s = 0.0;
            for (int k = 0; k < K; ++k) s += a[k] * b[k];
            c[j] = acc ? c[j] + s : s;
        }
    }
}

void gemm_tn(const double* A, const double* B, double* C, int M, int K, int N, bool acc) {
#pragma omp parallel for schedule(static) collapse(2)
    for (int i = 0; i < M; ++i) {
        for (int j = 0; j < N; ++j) {
            double s = 0.0;
            for (int k = 0; k < K; ++k)
                s += A[static_cast<size_t>(k) * M + i] * B[static_cast<size_t>(k) * N + j];
            double& c = C[static_cast<size_t>(i) * N + j];
            c = acc ? c + s : s;
        }
    }
}

void ln_forward(const double* X, const double* g, const double* b, double* H, double* mean,
                double* rstd, int R, int d, double eps) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < R; ++r)
        serial::detail::ln_forward_row(X + static_cast<size_t>(r) * d, g, b,
                                       H + static_cast<size_t>(r) * d, mean + r, rstd + r, d, eps);
}

void ln_backward(const double* X, const double* g, const double* mean, const double* rstd,
                 const double* dH, double* dX, double* dg, double* db, int R, int d) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < R; ++r)
        serial::detail::ln_backward_row(X + static_cast<size_t>(r) * d, g, mean[r], rstd[r],
                                        dH + static_cast<size_t>(r) * d,
                                        dX + static_cast<size_t>(r) * d, d);
#pragma omp parallel for schedule(static)
    for (int j = 0; j < d; ++j)
        serial::detail::ln_param_grad_col(X, mean, rstd, dH, dg, db, R, d, j);
}

void segment_add(const int* keys, const int* rows, const double* w, size_t n, const double* src,
                 double* dst, int d, double scale) {
    if (n == 0) return;
    // Segment starts: one worker owns each run of equal keys.
    std::vector<size_t> starts;
    starts.push_back(0);
    for (size_t i = 1; i < n; ++i)
        if (keys[i] != keys[i - 1]) starts.push_back(i);
    starts.push_back(n);
    int nseg = static_cast<int>(starts.size()) - 1;
#pragma omp parallel for schedule(static)
    for (int s = 0; s < nseg; ++s)
        serial::detail::segment_add_range(keys, rows, w, starts[s], starts[s + 1], src, dst, d,
                                          scale);
}

}  // namespace omp

// ------------------------------------------------------------- dispatch ----

void gemm_nn(const double* A, const double* B, double* C, int M, int K, int N, bool acc) {
    parallel_enabled() ? omp::gemm_nn(A, B, C, M, K, N, acc) : serial::gemm_nn(A, B, C, M, K, N, acc);
}
void gemm_nt(const double* A, const double* B, double* C, int M, int K, int N, bool acc) {
    parallel_enabled() ? omp::gemm_nt(A, B, C, M, K, N, acc) : serial::gemm_nt(A, B, C, M, K, N, acc);
}
void gemm_tn(const double* A, const double* B, double* C, int M, int K, int N, bool acc) {
    parallel_enabled() ? omp::gemm_tn(A, B, C, M, K, N, acc) : serial::gemm_tn(A, B, C, M, K, N, acc);
}
void ln_forward(const double* X, const double* g, const double* b, double* H, double* mean,
                double* rstd, int R, int d, double eps) {
    parallel_enabled() ? omp::ln_forward(X, g, b, H, mean, rstd, R, d, eps)
                       : serial::ln_forward(X, g, b, H, mean, rstd, R, d, eps);
}
void ln_backward(const double* X, const double* g, const double* mean, const double* rstd,
                 const double* dH, double* dX, double* dg, double* db, int R, int d) {
    parallel_enabled() ? omp::ln_backward(X, g, mean, rstd, dH, dX, dg, db, R, d)
                       : serial::ln_backward(X, g, mean, rstd, dH, dX, dg, db, R, d);
}
void segment_add(const int* keys, const int* rows, const double* w, size_t n, const double* src,
                 double* dst, int d, double scale) {
    parallel_enabled() ? omp::segment_add(keys, rows, w, n, src, dst, d, scale)
                       : serial::segment_add(keys, rows, w, n, src, dst, d, scale);
}

}  // namespace ufnrec::kernels

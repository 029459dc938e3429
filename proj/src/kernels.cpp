#include "wip/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace wip::kernels {

namespace {
Mode g_mode = Mode::parallel;
}

Mode mode() { return g_mode; }
void set_mode(Mode m) { g_mode = m; }

// All four transpose combinations keep a fixed ascending-k accumulation order
// per output element; parallelism is only over output rows.

namespace {

void gemm_nn(int64_t m, int64_t n, int64_t k, const double* a, int64_t lda,
             const double* b, int64_t ldb, double* c, int64_t ldc,
             bool accumulate, bool par) {
#pragma omp parallel for schedule(static) if (par)
    for (int64_t i = 0; i < m; ++i) {
        double* ci = c + i * ldc;
        if (!accumulate) std::memset(ci, 0, sizeof(double) * n);
        const double* ai = a + i * lda;
        for (int64_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * ldb;
#pragma omp simd
            for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void gemm_nt(int64_t m, int64_t n, int64_t k, const double* a, int64_t lda,
             const double* b, int64_t ldb, double* c, int64_t ldc,
             bool accumulate, bool par) {
#pragma omp parallel for schedule(static) if (par)
    for (int64_t i = 0; i < m; ++i) {
        const double* ai = a + i * lda;
        double* ci = c + i * ldc;
        for (int64_t j = 0; j < n; ++j) {
            const double* bj = b + j * ldb;
            double s = 0.0;
#pragma omp simd reduction(+ : s)
            for (int64_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] = accumulate ? ci[j] + s : s;
        }
    }
}

void gemm_tn(int64_t m, int64_t n, int64_t k, const double* a, int64_t lda,
             const double* b, int64_t ldb, double* c, int64_t ldc,
             bool accumulate, bool par) {
#pragma omp parallel for schedule(static) if (par)
    for (int64_t i = 0; i < m; ++i) {
        double* ci = c + i * ldc;
        if (!accumulate) std::memset(ci, 0, sizeof(double) * n);
        for (int64_t p = 0; p < k; ++p) {
            const double av = a[p * lda + i];
            const double* bp = b + p * ldb;
#pragma omp simd
            for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void gemm_tt(int64_t m, int64_t n, int64_t k, const double* a, int64_t lda,
             const double* b, int64_t ldb, double* c, int64_t ldc,
             bool accumulate, bool par) {
#pragma omp parallel for schedule(static) if (par)
    for (int64_t i = 0; i < m; ++i) {
        double* ci = c + i * ldc;
        for (int64_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (int64_t p = 0; p < k; ++p) s += a[p * lda + i] * b[j * ldb + p];
            ci[j] = accumulate ? ci[j] + s : s;
        }
    }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          const double* a, int64_t lda, const double* b, int64_t ldb,
          double* c, int64_t ldc, bool accumulate) {
    const bool par = g_mode == Mode::parallel;
    if (!trans_a && !trans_b) {
        gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, accumulate, par);
    } else if (!trans_a && trans_b) {
        gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, accumulate, par);
    } else if (trans_a && !trans_b) {
        gemm_tn(m, n, k, a, lda, b, ldb, c, ldc, accumulate, par);
    } else {
        gemm_tt(m, n, k, a, lda, b, ldb, c, ldc, accumulate, par);
    }
}

void matmul(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
            const double* a, const double* b, double* c, bool accumulate) {
    const int64_t lda = trans_a ? m : k;
    const int64_t ldb = trans_b ? k : n;
    gemm(trans_a, trans_b, m, n, k, a, lda, b, ldb, c, n, accumulate);
}

void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols,
                  const int64_t* valid) {
    const bool par = g_mode == Mode::parallel;
#pragma omp parallel for schedule(static) if (par)
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = x + r * cols;
        double* yr = y + r * cols;
        const int64_t nv = valid ? valid[r] : cols;
        double mx = -1e300;
        for (int64_t j = 0; j < nv; ++j) mx = std::max(mx, xr[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < nv; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        const double inv = 1.0 / sum;
        for (int64_t j = 0; j < nv; ++j) yr[j] *= inv;
        for (int64_t j = nv; j < cols; ++j) yr[j] = 0.0;
    }
}

void layer_norm_rows(const double* x, const double* gamma, const double* beta,
                     double* y, double* mean, double* inv_std, int64_t rows,
                     int64_t cols, double eps) {
    const bool par = g_mode == Mode::parallel;
#pragma omp parallel for schedule(static) if (par)
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = x + r * cols;
        double* yr = y + r * cols;
        double mu = 0.0;
        for (int64_t j = 0; j < cols; ++j) mu += xr[j];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            const double d = xr[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const double is = 1.0 / std::sqrt(var + eps);
        mean[r] = mu;
        inv_std[r] = is;
        for (int64_t j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * is * gamma[j] + beta[j];
    }
}

void add_bias_rows(const double* x, const double* bias, double* y,
                   int64_t rows, int64_t cols) {
    const bool par = g_mode == Mode::parallel;
#pragma omp parallel for schedule(static) if (par)
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = x + r * cols;
        double* yr = y + r * cols;
#pragma omp simd
        for (int64_t j = 0; j < cols; ++j) yr[j] = xr[j] + bias[j];
    }
}

}  // namespace wip::kernels

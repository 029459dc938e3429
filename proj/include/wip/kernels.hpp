#pragma once

#include <cstdint>

// Dense numeric kernels used by the model and the losses. Every kernel has a
// serial reference implementation and an OpenMP one. Both accumulate each
// output element in the same fixed order, so results are bitwise identical
// across modes and thread counts; tests compare them directly and
// bench/kernel_bench times them against each other.
namespace wip::kernels {

enum class Mode { serial, parallel };

Mode mode();
void set_mode(Mode m);

// C[m x n] = op(A) * op(B), optionally accumulating into C.
// Row-major, op(X) = X or X^T per flag. lda/ldb/ldc are row strides.
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          const double* a, int64_t lda, const double* b, int64_t ldb,
          double* c, int64_t ldc, bool accumulate);

// Convenience wrapper for contiguous matrices.
void matmul(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
            const double* a, const double* b, double* c, bool accumulate);

// Row-wise softmax over [rows x cols]; when valid is non-null, row r only
// attends to its first valid[r] columns and the rest are set to zero.
void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols,
                  const int64_t* valid);

// y = layer-normalized rows of x with affine (gamma, beta); per-row mean and
// inverse stddev are written out for the backward pass.
void layer_norm_rows(const double* x, const double* gamma, const double* beta,
                     double* y, double* mean, double* inv_std, int64_t rows,
                     int64_t cols, double eps);

// y[r][:] = x[r][:] + bias[:]
void add_bias_rows(const double* x, const double* bias, double* y,
                   int64_t rows, int64_t cols);

}  // namespace wip::kernels

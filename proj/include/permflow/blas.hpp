#pragma once

namespace permflow {

// Row-major dgemm: C = alpha * op(A) * op(B) + beta * C.
// op(A) is m x k, op(B) is k x n, C is m x n.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a,
          int lda, const double* b, int ldb, double beta, double* c, int ldc);

// Number of BLAS threads to use for subsequent calls.
void set_blas_threads(int n);

int hardware_threads();

}  // namespace permflow

#pragma once

#include <cstdint>

namespace clam {

// C[m x n] = alpha * op(A) * op(B) + beta * C, all row-major.
// op(A) is m x k (stored k x m when trans_a), op(B) is k x n.
// Backed by BLAS dgemm; results are bit-reproducible for a fixed build.
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          double alpha, const double* a, const double* b, double beta, double* c);

// Caps the BLAS thread pool; used when runs are parallelized at process level.
void set_blas_threads(int n);

}  // namespace clam

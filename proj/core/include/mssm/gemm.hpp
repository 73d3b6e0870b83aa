#pragma once

#include <cstddef>

namespace mssm {

/// C = alpha * op(A) * op(B) + beta * C on row-major buffers, where op(X) is
/// X or its transpose. op(A) is m x k, op(B) is k x n. Backed by CBLAS.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc);

/// Caps the BLAS worker pool. Runs executed on several threads set this to 1.
void set_blas_threads(int n);

}  // namespace mssm

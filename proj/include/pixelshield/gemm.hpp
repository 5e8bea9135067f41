#pragma once

#include <cstdint>

namespace pxs {

// Row-major single-precision matrix products used by the conv/matmul ops.
// Accumulation order is fixed, so results are bit-reproducible run to run.

// C[M,N] = A[M,K] * B[K,N] + (accumulate ? C : 0)
void sgemm_nn(std::int64_t M, std::int64_t N, std::int64_t K, const float* A, std::int64_t lda,
              const float* B, std::int64_t ldb, float* C, std::int64_t ldc, bool accumulate);

// C[M,N] = A[M,K] * B[N,K]^T + (accumulate ? C : 0)
void sgemm_nt(std::int64_t M, std::int64_t N, std::int64_t K, const float* A, std::int64_t lda,
              const float* B, std::int64_t ldb, float* C, std::int64_t ldc, bool accumulate);

}  // namespace pxs

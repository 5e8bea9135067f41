#include "pixelshield/gemm.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace pxs {

namespace {

constexpr std::int64_t kMr = 4;
constexpr std::int64_t kNr = 32;

// 4x32 microkernel; the j-loop maps onto two 16-wide FMA lanes per row.
inline void kernel_nn_4x32(std::int64_t K, const float* A, std::int64_t lda, const float* B,
                           std::int64_t ldb, float* C, std::int64_t ldc, bool accumulate) {
    float acc[kMr][kNr];
    if (accumulate) {
        for (std::int64_t i = 0; i < kMr; ++i)
            std::memcpy(acc[i], C + i * ldc, kNr * sizeof(float));
    } else {
        for (auto& row : acc)
            for (float& v : row) v = 0.0f;
    }
    for (std::int64_t k = 0; k < K; ++k) {
        const float* bk = B + k * ldb;
        for (std::int64_t i = 0; i < kMr; ++i) {
            const float a = A[i * lda + k];
            for (std::int64_t j = 0; j < kNr; ++j) acc[i][j] += a * bk[j];
        }
    }
    for (std::int64_t i = 0; i < kMr; ++i) std::memcpy(C + i * ldc, acc[i], kNr * sizeof(float));
}

inline void kernel_nn_edge(std::int64_t mr, std::int64_t nr, std::int64_t K, const float* A,
                           std::int64_t lda, const float* B, std::int64_t ldb, float* C,
                           std::int64_t ldc, bool accumulate) {
    for (std::int64_t i = 0; i < mr; ++i) {
        for (std::int64_t j = 0; j < nr; ++j) {
            float s = accumulate ? C[i * ldc + j] : 0.0f;
            for (std::int64_t k = 0; k < K; ++k) s += A[i * lda + k] * B[k * ldb + j];
            C[i * ldc + j] = s;
        }
    }
}

}  // namespace

void sgemm_nn(std::int64_t M, std::int64_t N, std::int64_t K, const float* A, std::int64_t lda,
              const float* B, std::int64_t ldb, float* C, std::int64_t ldc, bool accumulate) {
    std::int64_t i = 0;
    for (; i + kMr <= M; i += kMr) {
        std::int64_t j = 0;
        for (; j + kNr <= N; j += kNr)
            kernel_nn_4x32(K, A + i * lda, lda, B + j, ldb, C + i * ldc + j, ldc, accumulate);
        if (j < N)
            kernel_nn_edge(kMr, N - j, K, A + i * lda, lda, B + j, ldb, C + i * ldc + j, ldc,
                           accumulate);
    }
    if (i < M) kernel_nn_edge(M - i, N, K, A + i * lda, lda, B, ldb, C + i * ldc, ldc, accumulate);
}

void sgemm_nt(std::int64_t M, std::int64_t N, std::int64_t K, const float* A, std::int64_t lda,
              const float* B, std::int64_t ldb, float* C, std::int64_t ldc, bool accumulate) {
    // C = A * B^T. Transposing B once lets the fast nn kernel do the work;
    // the blocked transpose is cheap next to the multiply.
    thread_local std::vector<float> bt;
    bt.resize(static_cast<std::size_t>(K) * N);
    constexpr std::int64_t kBlk = 32;
    for (std::int64_t j0 = 0; j0 < N; j0 += kBlk) {
        const std::int64_t j1 = std::min(N, j0 + kBlk);
        for (std::int64_t k0 = 0; k0 < K; k0 += kBlk) {
            const std::int64_t k1 = std::min(K, k0 + kBlk);
            for (std::int64_t j = j0; j < j1; ++j)
                for (std::int64_t k = k0; k < k1; ++k) bt[k * N + j] = B[j * ldb + k];
        }
    }
    sgemm_nn(M, N, K, A, lda, bt.data(), N, C, ldc, accumulate);
}

}  // namespace pxs

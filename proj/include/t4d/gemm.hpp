#pragma once

#include <cstdint>

namespace t4d {

// C[i,j] += sum_k A[i,k] * B[k,j] over rows x cols with contraction depth kk.
// lda/ldb/ldc are row strides, so callers can address sub-blocks of larger
// buffers (e.g. one time slab of a (C,T,X,Y,Z) tensor) without copying.
//
// Each C element is accumulated in ascending-k order regardless of blocking,
// so results are bitwise reproducible.
template <typename T>
void gemm_acc(T* c, std::int64_t ldc, const T* a, std::int64_t lda, const T* b, std::int64_t ldb,
              std::int64_t rows, std::int64_t kk, std::int64_t cols) {
    std::int64_t i = 0;
    for (; i + 4 <= rows; i += 4) {
        T* c0 = c + i * ldc;
        T* c1 = c0 + ldc;
        T* c2 = c1 + ldc;
        T* c3 = c2 + ldc;
        const T* a0 = a + i * lda;
        const T* a1 = a0 + lda;
        const T* a2 = a1 + lda;
        const T* a3 = a2 + lda;
        for (std::int64_t k = 0; k < kk; ++k) {
            const T w0 = a0[k];
            const T w1 = a1[k];
            const T w2 = a2[k];
            const T w3 = a3[k];
            const T* br = b + k * ldb;
            for (std::int64_t j = 0; j < cols; ++j) {
                const T v = br[j];
                c0[j] += w0 * v;
                c1[j] += w1 * v;
                c2[j] += w2 * v;
                c3[j] += w3 * v;
            }
        }
    }
    for (; i < rows; ++i) {
        T* ci = c + i * ldc;
        const T* ai = a + i * lda;
        for (std::int64_t k = 0; k < kk; ++k) {
            const T w = ai[k];
            const T* br = b + k * ldb;
            for (std::int64_t j = 0; j < cols; ++j) ci[j] += w * br[j];
        }
    }
}

// B_t[j,i] = B[i,j] for an rows x cols block with row stride ldb; output is
// tightly packed (cols x rows).
template <typename T>
void transpose_block(T* bt, const T* b, std::int64_t ldb, std::int64_t rows, std::int64_t cols) {
    for (std::int64_t i = 0; i < rows; ++i) {
        const T* src = b + i * ldb;
        for (std::int64_t j = 0; j < cols; ++j) bt[j * rows + i] = src[j];
    }
}

}  // namespace t4d

#pragma once

#include <cstddef>

namespace effnet::detail {

// Row-major C[m x n] += A[m x k] * B[k x n].
// Each element of C accumulates its k products in ascending k order, so the
// result is bit-identical to a plain sequential dot product.
template <typename T>
void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);

// Row-major C[k x n] += A^T * B with A stored as [m x k] and B as [m x n].
template <typename T>
void gemm_tn_accumulate(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);

// out[cols x rows] = transpose of in[rows x cols].
template <typename T> void transpose(std::size_t rows, std::size_t cols, const T* in, T* out);

} // namespace effnet::detail

#include "gemm.hpp"

#include <algorithm>

namespace effnet::detail {

namespace {
constexpr std::size_t kBlockK = 256;
constexpr std::size_t kBlockN = 512;
} // namespace

template <typename T>
void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t k0 = 0; k0 < k; k0 += kBlockK) {
    const std::size_t k1 = std::min(k, k0 + kBlockK);
    for (std::size_t j0 = 0; j0 < n; j0 += kBlockN) {
      const std::size_t nb = std::min(n, j0 + kBlockN) - j0;
      std::size_t i = 0;
      for (; i + 4 <= m; i += 4) {
        T* c0 = c + i * n + j0;
        T* c1 = c0 + n;
        T* c2 = c1 + n;
        T* c3 = c2 + n;
        const T* ar = a + i * k;
        for (std::size_t kk = k0; kk < k1; ++kk) {
          const T a0 = ar[kk];
          const T a1 = ar[k + kk];
          const T a2 = ar[2 * k + kk];
          const T a3 = ar[3 * k + kk];
          const T* br = b + kk * n + j0;
          for (std::size_t j = 0; j < nb; ++j) {
            const T bv = br[j];
            c0[j] += a0 * bv;
            c1[j] += a1 * bv;
            c2[j] += a2 * bv;
            c3[j] += a3 * bv;
          }
        }
      }
      for (; i < m; ++i) {
        T* ci = c + i * n + j0;
        for (std::size_t kk = k0; kk < k1; ++kk) {
          const T av = a[i * k + kk];
          const T* br = b + kk * n + j0;
          for (std::size_t j = 0; j < nb; ++j) ci[j] += av * br[j];
        }
      }
    }
  }
}

template <typename T>
void gemm_tn_accumulate(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ar = a + i * k;
    const T* br = b + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = ar[kk];
      if (av == T(0)) continue;
      T* cr = c + kk * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

template <typename T> void transpose(std::size_t rows, std::size_t cols, const T* in, T* out) {
  constexpr std::size_t kTile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile) {
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::size_t r1 = std::min(rows, r0 + kTile);
      const std::size_t c1 = std::min(cols, c0 + kTile);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t cc = c0; cc < c1; ++cc) out[cc * rows + r] = in[r * cols + cc];
    }
  }
}

template void gemm_accumulate<float>(std::size_t, std::size_t, std::size_t, const float*,
                                     const float*, float*);
template void gemm_accumulate<double>(std::size_t, std::size_t, std::size_t, const double*,
                                      const double*, double*);
template void gemm_tn_accumulate<float>(std::size_t, std::size_t, std::size_t, const float*,
                                        const float*, float*);
template void gemm_tn_accumulate<double>(std::size_t, std::size_t, std::size_t, const double*,
                                         const double*, double*);
template void transpose<float>(std::size_t, std::size_t, const float*, float*);
template void transpose<double>(std::size_t, std::size_t, const double*, double*);

} // namespace effnet::detail

#include "pfedcr/gemm.hpp"

#include <cstring>
#include <type_traits>

#if defined(__AVX512F__) || defined(__AVX2__)
#include <immintrin.h>
#endif

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace pfedcr::detail {

#if defined(__GLIBC__)
namespace {
// Activation buffers run tens of MB; keeping them on the heap free-list
// instead of mmap avoids refaulting freshly zeroed pages every batch.
[[maybe_unused]] const bool malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
}  // namespace
#endif

namespace {

// Dot products for the nt form. The lane-strided order (vector lanes reduced
// by fixed shuffles, then the scalar tail) is part of the reproducibility
// contract: it never depends on alignment or data.
//
// The nn/tn kernels keep one fused multiply-add per k step for every output
// element, so a C element's bits do not depend on how rows and columns were
// tiled; forwarding a batch of any size yields the same per-sample values.
#if defined(__AVX512F__)

float dot_tail(const float* a, const float* b, int from, int k, float acc) {
  for (int kk = from; kk < k; ++kk) acc += a[kk] * b[kk];
  return acc;
}

template <int R>
void rows_f32(int n, int k, const float* a_base, std::size_t ar, std::size_t ak,
              const float* b, float* c0, bool accumulate) {
  int j = 0;
  for (; j + 32 <= n; j += 32) {
    __m512 acc[R][2];
    for (int r = 0; r < R; ++r) {
      float* crow = c0 + static_cast<std::size_t>(r) * n + j;
      acc[r][0] = accumulate ? _mm512_loadu_ps(crow) : _mm512_setzero_ps();
      acc[r][1] = accumulate ? _mm512_loadu_ps(crow + 16) : _mm512_setzero_ps();
    }
    for (int kk = 0; kk < k; ++kk) {
      const float* brow = b + static_cast<std::size_t>(kk) * n + j;
      const __m512 b0 = _mm512_loadu_ps(brow);
      const __m512 b1 = _mm512_loadu_ps(brow + 16);
      for (int r = 0; r < R; ++r) {
        const __m512 av = _mm512_set1_ps(a_base[r * ar + kk * ak]);
        acc[r][0] = _mm512_fmadd_ps(av, b0, acc[r][0]);
        acc[r][1] = _mm512_fmadd_ps(av, b1, acc[r][1]);
      }
    }
    for (int r = 0; r < R; ++r) {
      float* crow = c0 + static_cast<std::size_t>(r) * n + j;
      _mm512_storeu_ps(crow, acc[r][0]);
      _mm512_storeu_ps(crow + 16, acc[r][1]);
    }
  }
  for (; j + 16 <= n; j += 16) {
    __m512 acc[R];
    for (int r = 0; r < R; ++r)
      acc[r] = accumulate ? _mm512_loadu_ps(c0 + static_cast<std::size_t>(r) * n + j)
                          : _mm512_setzero_ps();
    for (int kk = 0; kk < k; ++kk) {
      const __m512 b0 = _mm512_loadu_ps(b + static_cast<std::size_t>(kk) * n + j);
      for (int r = 0; r < R; ++r)
        acc[r] = _mm512_fmadd_ps(_mm512_set1_ps(a_base[r * ar + kk * ak]), b0, acc[r]);
    }
    for (int r = 0; r < R; ++r)
      _mm512_storeu_ps(c0 + static_cast<std::size_t>(r) * n + j, acc[r]);
  }
  if (j < n) {
    const __mmask16 mask = static_cast<__mmask16>((1u << (n - j)) - 1u);
    __m512 acc[R];
    for (int r = 0; r < R; ++r)
      acc[r] = accumulate
                   ? _mm512_maskz_loadu_ps(mask, c0 + static_cast<std::size_t>(r) * n + j)
                   : _mm512_setzero_ps();
    for (int kk = 0; kk < k; ++kk) {
      const __m512 b0 = _mm512_maskz_loadu_ps(mask, b + static_cast<std::size_t>(kk) * n + j);
      for (int r = 0; r < R; ++r)
        acc[r] = _mm512_fmadd_ps(_mm512_set1_ps(a_base[r * ar + kk * ak]), b0, acc[r]);
    }
    for (int r = 0; r < R; ++r)
      _mm512_mask_storeu_ps(c0 + static_cast<std::size_t>(r) * n + j, mask, acc[r]);
  }
}

#define PFEDCR_GEMM_SIMD_F32 1

void dot4_f32(const float* a, const float* b0, const float* b1, const float* b2,
              const float* b3, int k, float* out) {
  __m512 acc0 = _mm512_setzero_ps();
  __m512 acc1 = _mm512_setzero_ps();
  __m512 acc2 = _mm512_setzero_ps();
  __m512 acc3 = _mm512_setzero_ps();
  int kk = 0;
  for (; kk + 16 <= k; kk += 16) {
    const __m512 av = _mm512_loadu_ps(a + kk);
    acc0 = _mm512_fmadd_ps(av, _mm512_loadu_ps(b0 + kk), acc0);
    acc1 = _mm512_fmadd_ps(av, _mm512_loadu_ps(b1 + kk), acc1);
    acc2 = _mm512_fmadd_ps(av, _mm512_loadu_ps(b2 + kk), acc2);
    acc3 = _mm512_fmadd_ps(av, _mm512_loadu_ps(b3 + kk), acc3);
  }
  out[0] = dot_tail(a, b0, kk, k, _mm512_reduce_add_ps(acc0));
  out[1] = dot_tail(a, b1, kk, k, _mm512_reduce_add_ps(acc1));
  out[2] = dot_tail(a, b2, kk, k, _mm512_reduce_add_ps(acc2));
  out[3] = dot_tail(a, b3, kk, k, _mm512_reduce_add_ps(acc3));
}

float dot1_f32(const float* a, const float* b, int k) {
  __m512 acc = _mm512_setzero_ps();
  int kk = 0;
  for (; kk + 16 <= k; kk += 16)
    acc = _mm512_fmadd_ps(_mm512_loadu_ps(a + kk), _mm512_loadu_ps(b + kk), acc);
  return dot_tail(a, b, kk, k, _mm512_reduce_add_ps(acc));
}

#elif defined(__AVX2__) && defined(__FMA__)

float dot_tail(const float* a, const float* b, int from, int k, float acc) {
  for (int kk = from; kk < k; ++kk) acc += a[kk] * b[kk];
  return acc;
}

float hsum8(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  __m128 s = _mm_add_ps(lo, hi);
  s = _mm_add_ps(s, _mm_movehl_ps(s, s));
  s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 1));
  return _mm_cvtss_f32(s);
}

void dot4_f32(const float* a, const float* b0, const float* b1, const float* b2,
              const float* b3, int k, float* out) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  __m256 acc2 = _mm256_setzero_ps();
  __m256 acc3 = _mm256_setzero_ps();
  int kk = 0;
  for (; kk + 8 <= k; kk += 8) {
    const __m256 av = _mm256_loadu_ps(a + kk);
    acc0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b0 + kk), acc0);
    acc1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b1 + kk), acc1);
    acc2 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b2 + kk), acc2);
    acc3 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b3 + kk), acc3);
  }
  out[0] = dot_tail(a, b0, kk, k, hsum8(acc0));
  out[1] = dot_tail(a, b1, kk, k, hsum8(acc1));
  out[2] = dot_tail(a, b2, kk, k, hsum8(acc2));
  out[3] = dot_tail(a, b3, kk, k, hsum8(acc3));
}

float dot1_f32(const float* a, const float* b, int k) {
  __m256 acc = _mm256_setzero_ps();
  int kk = 0;
  for (; kk + 8 <= k; kk += 8)
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + kk), _mm256_loadu_ps(b + kk), acc);
  return dot_tail(a, b, kk, k, hsum8(acc));
}

template <int R>
void rows_f32(int n, int k, const float* a_base, std::size_t ar, std::size_t ak,
              const float* b, float* c0, bool accumulate) {
  int j = 0;
  for (; j + 16 <= n; j += 16) {
    __m256 acc[R][2];
    for (int r = 0; r < R; ++r) {
      float* crow = c0 + static_cast<std::size_t>(r) * n + j;
      acc[r][0] = accumulate ? _mm256_loadu_ps(crow) : _mm256_setzero_ps();
      acc[r][1] = accumulate ? _mm256_loadu_ps(crow + 8) : _mm256_setzero_ps();
    }
    for (int kk = 0; kk < k; ++kk) {
      const float* brow = b + static_cast<std::size_t>(kk) * n + j;
      const __m256 b0 = _mm256_loadu_ps(brow);
      const __m256 b1 = _mm256_loadu_ps(brow + 8);
      for (int r = 0; r < R; ++r) {
        const __m256 av = _mm256_set1_ps(a_base[r * ar + kk * ak]);
        acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
        acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
      }
    }
    for (int r = 0; r < R; ++r) {
      float* crow = c0 + static_cast<std::size_t>(r) * n + j;
      _mm256_storeu_ps(crow, acc[r][0]);
      _mm256_storeu_ps(crow + 8, acc[r][1]);
    }
  }
  for (; j < n; ++j) {
    for (int r = 0; r < R; ++r) {
      float acc = accumulate ? c0[static_cast<std::size_t>(r) * n + j] : 0.0f;
      for (int kk = 0; kk < k; ++kk)
        acc = __builtin_fmaf(a_base[r * ar + kk * ak], b[static_cast<std::size_t>(kk) * n + j],
                             acc);
      c0[static_cast<std::size_t>(r) * n + j] = acc;
    }
  }
}

#define PFEDCR_GEMM_SIMD_F32 1

#endif

// Four A-scalars per pass over a C row keeps the j-loop FMA-bound instead
// of load/store-bound; the tail handles k % 4.
template <typename T>
void row_update(const T* a_row, const T* b, int n, int k, T* c_row) {
  int kk = 0;
  for (; kk + 4 <= k; kk += 4) {
    const T a0 = a_row[kk + 0];
    const T a1 = a_row[kk + 1];
    const T a2 = a_row[kk + 2];
    const T a3 = a_row[kk + 3];
    const T* b0 = b + static_cast<std::size_t>(kk + 0) * n;
    const T* b1 = b + static_cast<std::size_t>(kk + 1) * n;
    const T* b2 = b + static_cast<std::size_t>(kk + 2) * n;
    const T* b3 = b + static_cast<std::size_t>(kk + 3) * n;
    for (int j = 0; j < n; ++j) {
      c_row[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
    }
  }
  for (; kk < k; ++kk) {
    const T a0 = a_row[kk];
    const T* b0 = b + static_cast<std::size_t>(kk) * n;
    for (int j = 0; j < n; ++j) c_row[j] += a0 * b0[j];
  }
}

}  // namespace

template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
#if defined(PFEDCR_GEMM_SIMD_F32)
  if constexpr (std::is_same_v<T, float>) {
    int i0 = 0;
    for (; i0 + 4 <= m; i0 += 4)
      rows_f32<4>(n, k, a + static_cast<std::size_t>(i0) * k, static_cast<std::size_t>(k), 1,
                  b, c + static_cast<std::size_t>(i0) * n, accumulate);
    for (; i0 < m; ++i0)
      rows_f32<1>(n, k, a + static_cast<std::size_t>(i0) * k, static_cast<std::size_t>(k), 1,
                  b, c + static_cast<std::size_t>(i0) * n, accumulate);
    return;
  }
#endif
  for (int i = 0; i < m; ++i) {
    T* c_row = c + static_cast<std::size_t>(i) * n;
    if (!accumulate) std::memset(c_row, 0, sizeof(T) * static_cast<std::size_t>(n));
    row_update(a + static_cast<std::size_t>(i) * k, b, n, k, c_row);
  }
}

template <typename T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
#if defined(PFEDCR_GEMM_SIMD_F32)
  if constexpr (std::is_same_v<T, float>) {
    int i0 = 0;
    for (; i0 + 4 <= m; i0 += 4)
      rows_f32<4>(n, k, a + i0, 1, static_cast<std::size_t>(m), b,
                  c + static_cast<std::size_t>(i0) * n, accumulate);
    for (; i0 < m; ++i0)
      rows_f32<1>(n, k, a + i0, 1, static_cast<std::size_t>(m), b,
                  c + static_cast<std::size_t>(i0) * n, accumulate);
    return;
  }
#endif
  if (!accumulate) std::memset(c, 0, sizeof(T) * static_cast<std::size_t>(m) * n);
  // A is [k,m]; walk k outermost so both A rows and B rows stream.
  for (int kk = 0; kk < k; ++kk) {
    const T* a_row = a + static_cast<std::size_t>(kk) * m;
    const T* b_row = b + static_cast<std::size_t>(kk) * n;
    for (int i = 0; i < m; ++i) {
      const T ai = a_row[i];
      T* c_row = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) c_row[j] += ai * b_row[j];
    }
  }
}

template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
#if defined(PFEDCR_GEMM_SIMD_F32)
  if constexpr (std::is_same_v<T, float>) {
    for (int i = 0; i < m; ++i) {
      const float* a_row = a + static_cast<std::size_t>(i) * k;
      float* c_row = c + static_cast<std::size_t>(i) * n;
      int j = 0;
      for (; j + 4 <= n; j += 4) {
        float d[4];
        const float* base = b + static_cast<std::size_t>(j) * k;
        dot4_f32(a_row, base, base + k, base + 2 * static_cast<std::size_t>(k),
                 base + 3 * static_cast<std::size_t>(k), k, d);
        if (accumulate)
          for (int q = 0; q < 4; ++q) c_row[j + q] += d[q];
        else
          for (int q = 0; q < 4; ++q) c_row[j + q] = d[q];
      }
      for (; j < n; ++j) {
        const float d = dot1_f32(a_row, b + static_cast<std::size_t>(j) * k, k);
        c_row[j] = accumulate ? c_row[j] + d : d;
      }
    }
    return;
  }
#endif
  for (int i = 0; i < m; ++i) {
    const T* a_row = a + static_cast<std::size_t>(i) * k;
    T* c_row = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* b_row = b + static_cast<std::size_t>(j) * k;
      T acc = accumulate ? c_row[j] : T(0);
      for (int kk = 0; kk < k; ++kk) acc += a_row[kk] * b_row[kk];
      c_row[j] = acc;
    }
  }
}

template void gemm_nn<float>(int, int, int, const float*, const float*, float*, bool);
template void gemm_nn<double>(int, int, int, const double*, const double*, double*, bool);
template void gemm_tn<float>(int, int, int, const float*, const float*, float*, bool);
template void gemm_tn<double>(int, int, int, const double*, const double*, double*, bool);
template void gemm_nt<float>(int, int, int, const float*, const float*, float*, bool);
template void gemm_nt<double>(int, int, int, const double*, const double*, double*, bool);

}  // namespace pfedcr::detail

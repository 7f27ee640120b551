#pragma once

#include <cstddef>

namespace pfedcr::detail {

/// C[m,n] += A[m,k] * B[k,n], all row-major. When accumulate is false C is
/// overwritten. Summation order over k is fixed, so results are
/// bit-reproducible for a given build.
template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);

/// C[m,n] += A[k,m]^T * B[k,n].
template <typename T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);

/// C[m,n] += A[m,k] * B[n,k]^T.
template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);

}  // namespace pfedcr::detail

#pragma once

// Dense row-major kernels. Each kernel has a serial reference implementation
// and an OpenMP implementation that partitions work over output rows only, so
// every output element sees the same summation order and both variants are
// bit-identical for any thread count.

#include <cstdint>

namespace tody::kernels {

using Index = std::int64_t;

namespace serial {

// C[m,n] (+)= A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, Index m, Index k, Index n, bool accumulate);
// C[m,n] (+)= A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, Index m, Index k, Index n, bool accumulate);
// C[m,n] (+)= A[r,m]^T * B[r,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, Index r, Index m, Index n, bool accumulate);

// Row-wise softmax over `cols`, restricted to entries with mask != 0. Rows
// with no admissible entry produce zeros.
template <typename T>
void masked_softmax_rows(const T* x, const unsigned char* mask, T* y, Index rows, Index cols);

// y = (x - mean) / sqrt(var + eps) * gain + bias per row; writes the
// normalized value and the inverse std for the backward pass.
template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, T* xhat, T* inv_std, Index rows,
                     Index cols, T eps);

}  // namespace serial

namespace omp {

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, Index m, Index k, Index n, bool accumulate);
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, Index m, Index k, Index n, bool accumulate);
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, Index r, Index m, Index n, bool accumulate);
template <typename T>
void masked_softmax_rows(const T* x, const unsigned char* mask, T* y, Index rows, Index cols);
template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, T* xhat, T* inv_std, Index rows,
                     Index cols, T eps);

}  // namespace omp

// Number of worker threads used by the OpenMP kernels (1 when built without OpenMP).
int max_threads();
void set_num_threads(int n);

}  // namespace tody::kernels

#include "tody/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tody::kernels {

namespace serial {

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, Index m, Index k, Index n, bool accumulate) {
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T(0);
      for (Index p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, Index m, Index k, Index n, bool accumulate) {
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T(0);
      for (Index p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = s;
    }
  }
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, Index r, Index m, Index n, bool accumulate) {
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T(0);
      for (Index p = 0; p < r; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

template <typename T>
void masked_softmax_rows(const T* x, const unsigned char* mask, T* y, Index rows, Index cols) {
  for (Index i = 0; i < rows; ++i) {
    const T* xr = x + i * cols;
    const unsigned char* mr = mask + i * cols;
    T* yr = y + i * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (Index j = 0; j < cols; ++j) {
      if (mr[j]) mx = std::max(mx, xr[j]);
    }
    T z = 0;
    for (Index j = 0; j < cols; ++j) {
      yr[j] = mr[j] ? std::exp(xr[j] - mx) : T(0);
      z += yr[j];
    }
    if (z > T(0)) {
      for (Index j = 0; j < cols; ++j) yr[j] /= z;
    }
  }
}

template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, T* xhat, T* inv_std, Index rows,
                     Index cols, T eps) {
  for (Index i = 0; i < rows; ++i) {
    const T* xr = x + i * cols;
    T mean = 0;
    for (Index j = 0; j < cols; ++j) mean += xr[j];
    mean /= static_cast<T>(cols);
    T var = 0;
    for (Index j = 0; j < cols; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(cols);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[i] = is;
    for (Index j = 0; j < cols; ++j) {
      const T h = (xr[j] - mean) * is;
      xhat[i * cols + j] = h;
      y[i * cols + j] = h * gain[j] + bias[j];
    }
  }
}

}  // namespace serial

namespace omp {

namespace {
// Below this many multiply-adds the fork/join overhead dominates.
constexpr Index kParallelWork = 1 << 15;
}  // namespace

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, Index m, Index k, Index n, bool accumulate) {
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (Index i = 0; i < m; ++i) {
    T* cr = c + i * n;
    if (!accumulate) std::fill(cr, cr + n, T(0));
    const T* ar = a + i * k;
    for (Index p = 0; p < k; ++p) {
      const T av = ar[p];
      const T* br = b + p * n;
#pragma omp simd
      for (Index j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, Index m, Index k, Index n, bool accumulate) {
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (Index i = 0; i < m; ++i) {
    const T* ar = a + i * k;
    for (Index j = 0; j < n; ++j) {
      const T* br = b + j * k;
      T s = accumulate ? c[i * n + j] : T(0);
      for (Index p = 0; p < k; ++p) s += ar[p] * br[p];
      c[i * n + j] = s;
    }
  }
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, Index r, Index m, Index n, bool accumulate) {
#pragma omp parallel for schedule(static) if (r * m * n > kParallelWork)
  for (Index i = 0; i < m; ++i) {
    T* cr = c + i * n;
    if (!accumulate) std::fill(cr, cr + n, T(0));
    for (Index p = 0; p < r; ++p) {
      const T av = a[p * m + i];
      const T* br = b + p * n;
#pragma omp simd
      for (Index j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

template <typename T>
void masked_softmax_rows(const T* x, const unsigned char* mask, T* y, Index rows, Index cols) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (Index i = 0; i < rows; ++i) {
    serial::masked_softmax_rows(x + i * cols, mask + i * cols, y + i * cols, 1, cols);
  }
}

template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, T* xhat, T* inv_std, Index rows,
                     Index cols, T eps) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (Index i = 0; i < rows; ++i) {
    serial::layer_norm_rows(x + i * cols, gain, bias, y + i * cols, xhat + i * cols, inv_std + i, 1, cols,
                            eps);
  }
}

}  // namespace omp

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_num_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

#define TODY_INSTANTIATE_KERNELS(NS, T)                                                             \
  template void NS::gemm_nn<T>(const T*, const T*, T*, Index, Index, Index, bool);                  \
  template void NS::gemm_nt<T>(const T*, const T*, T*, Index, Index, Index, bool);                  \
  template void NS::gemm_tn<T>(const T*, const T*, T*, Index, Index, Index, bool);                  \
  template void NS::masked_softmax_rows<T>(const T*, const unsigned char*, T*, Index, Index);       \
  template void NS::layer_norm_rows<T>(const T*, const T*, const T*, T*, T*, T*, Index, Index, T);

TODY_INSTANTIATE_KERNELS(serial, float)
TODY_INSTANTIATE_KERNELS(serial, double)
TODY_INSTANTIATE_KERNELS(omp, float)
TODY_INSTANTIATE_KERNELS(omp, double)

}  // namespace tody::kernels

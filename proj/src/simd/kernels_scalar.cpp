#include "scpr/simd/kernels.hpp"

namespace scpr::simd::scalar {

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixView<T> a,
          MatrixView<T> b, T* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = T{0};
    }
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a.data[i * a.row_stride + p * a.col_stride];
      const T* brow = b.data + p * b.row_stride;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j * b.col_stride];
    }
  }
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template void gemm<float>(std::size_t, std::size_t, std::size_t, MatrixView<float>,
                          MatrixView<float>, float*, std::size_t, bool);
template void gemm<double>(std::size_t, std::size_t, std::size_t, MatrixView<double>,
                           MatrixView<double>, double*, std::size_t, bool);
template float dot<float>(const float*, const float*, std::size_t);
template double dot<double>(const double*, const double*, std::size_t);
template void axpy<float>(float, const float*, float*, std::size_t);
template void axpy<double>(double, const double*, double*, std::size_t);

}  // namespace scpr::simd::scalar

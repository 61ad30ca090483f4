#pragma once
// Dense arithmetic kernels with a scalar reference path and AVX2/FMA
// variants selected at runtime.
//
// Every kernel comes in float and double. The dispatching entry points in
// scpr::simd forward to whichever backend is active; scpr::simd::scalar and
// scpr::simd::avx2 expose the individual variants so that tests can compare
// them directly.

#include <cstddef>
#include <string_view>

namespace scpr::simd {

enum class Backend { kScalar, kAvx2 };

/// True when the binary carries AVX2 kernels and the CPU supports AVX2+FMA.
bool avx2_available() noexcept;

/// Backend used by the dispatching kernels. Defaults to the fastest available
/// one; the SCPR_SIMD environment variable ("scalar" or "avx2") overrides it.
Backend active_backend() noexcept;

/// Throws std::invalid_argument when the requested backend is unavailable.
void set_backend(Backend backend);

std::string_view backend_name(Backend backend) noexcept;

/// Strided view of a read-only matrix operand: element (r, c) lives at
/// data[r * row_stride + c * col_stride].
template <typename T>
struct MatrixView {
  const T* data;
  std::size_t row_stride;
  std::size_t col_stride;
};

/// C = A * B (or C += A * B when accumulate is set). A is m x k, B is k x n,
/// C is row-major m x n with leading dimension ldc.
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixView<T> a,
          MatrixView<T> b, T* c, std::size_t ldc, bool accumulate);

template <typename T>
T dot(const T* x, const T* y, std::size_t n);

/// y += alpha * x
template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n);

namespace scalar {
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixView<T> a,
          MatrixView<T> b, T* c, std::size_t ldc, bool accumulate);
template <typename T>
T dot(const T* x, const T* y, std::size_t n);
template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n);
}  // namespace scalar

namespace avx2 {
// B must have unit column stride; the dispatcher packs it otherwise.
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixView<T> a,
          MatrixView<T> b, T* c, std::size_t ldc, bool accumulate);
template <typename T>
T dot(const T* x, const T* y, std::size_t n);
template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n);
}  // namespace avx2

}  // namespace scpr::simd

// Compiled with -mavx2 -mfma. Nothing in this translation unit may run
// before the dispatcher has confirmed CPU support.
#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "scpr/simd/kernels.hpp"

namespace scpr::simd::avx2 {
namespace {

// Inner dimension is processed in blocks so that the active panel of B
// stays cache resident while all rows of A stream past it.
constexpr std::size_t kBlockK = 256;

template <typename T>
struct Lane;

template <>
struct Lane<float> {
  using Reg = __m256;
  static constexpr std::size_t kWidth = 8;
  static Reg zero() { return _mm256_setzero_ps(); }
  static Reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, Reg v) { _mm256_storeu_ps(p, v); }
  static Reg broadcast(float v) { return _mm256_set1_ps(v); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_ps(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm256_add_ps(a, b); }
  static float hsum(Reg v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
  }
};

template <>
struct Lane<double> {
  using Reg = __m256d;
  static constexpr std::size_t kWidth = 4;
  static Reg zero() { return _mm256_setzero_pd(); }
  static Reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, Reg v) { _mm256_storeu_pd(p, v); }
  static Reg broadcast(double v) { return _mm256_set1_pd(v); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_pd(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm256_add_pd(a, b); }
  static double hsum(Reg v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d high64 = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
  }
};

template <typename T>
inline void write_back(T* dst, typename Lane<T>::Reg acc, bool add) {
  using L = Lane<T>;
  if (add) acc = L::add(acc, L::load(dst));
  L::store(dst, acc);
}

// Rows x (Cols * kWidth) register tile. Each output element is the k-ordered
// fused sum of its row and column, independent of how rows are grouped.
template <typename T, std::size_t Rows, std::size_t Cols>
inline void micro_tile(std::size_t kc, const T* a, std::size_t a_rs, std::size_t a_cs,
                       const T* b, std::size_t ldb, T* c, std::size_t ldc, bool add) {
  using L = Lane<T>;
  typename L::Reg acc[Rows][Cols];
  for (std::size_t r = 0; r < Rows; ++r)
    for (std::size_t q = 0; q < Cols; ++q) acc[r][q] = L::zero();
  for (std::size_t p = 0; p < kc; ++p) {
    typename L::Reg bv[Cols];
    for (std::size_t q = 0; q < Cols; ++q) bv[q] = L::load(b + p * ldb + q * L::kWidth);
    for (std::size_t r = 0; r < Rows; ++r) {
      const typename L::Reg av = L::broadcast(a[r * a_rs + p * a_cs]);
      for (std::size_t q = 0; q < Cols; ++q) acc[r][q] = L::fmadd(av, bv[q], acc[r][q]);
    }
  }
  for (std::size_t r = 0; r < Rows; ++r)
    for (std::size_t q = 0; q < Cols; ++q)
      write_back<T>(c + r * ldc + q * L::kWidth, acc[r][q], add);
}

template <typename T, std::size_t Cols>
inline void column_panel(std::size_t m, std::size_t kc, const T* a, std::size_t a_rs,
                         std::size_t a_cs, const T* b, std::size_t ldb, T* c,
                         std::size_t ldc, bool add) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4)
    micro_tile<T, 4, Cols>(kc, a + i * a_rs, a_rs, a_cs, b, ldb, c + i * ldc, ldc, add);
  for (; i < m; ++i)
    micro_tile<T, 1, Cols>(kc, a + i * a_rs, a_rs, a_cs, b, ldb, c + i * ldc, ldc, add);
}

template <typename T>
void gemm_impl(std::size_t m, std::size_t n, std::size_t k, MatrixView<T> a,
               MatrixView<T> b, T* c, std::size_t ldc, bool accumulate) {
  using L = Lane<T>;
  constexpr std::size_t kWide = 2 * L::kWidth;
  if (k == 0) {
    if (!accumulate)
      for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, T{0});
    return;
  }
  for (std::size_t k0 = 0; k0 < k; k0 += kBlockK) {
    const std::size_t kc = std::min(kBlockK, k - k0);
    const bool add = accumulate || k0 > 0;
    const T* ablk = a.data + k0 * a.col_stride;
    const T* bblk = b.data + k0 * b.row_stride;
    std::size_t j = 0;
    for (; j + kWide <= n; j += kWide)
      column_panel<T, 2>(m, kc, ablk, a.row_stride, a.col_stride, bblk + j, b.row_stride,
                         c + j, ldc, add);
    for (; j + L::kWidth <= n; j += L::kWidth)
      column_panel<T, 1>(m, kc, ablk, a.row_stride, a.col_stride, bblk + j, b.row_stride,
                         c + j, ldc, add);
    for (; j < n; ++j) {
      for (std::size_t i = 0; i < m; ++i) {
        T acc{0};
        for (std::size_t p = 0; p < kc; ++p)
          acc = std::fma(ablk[i * a.row_stride + p * a.col_stride], bblk[p * b.row_stride + j],
                         acc);
        T& out = c[i * ldc + j];
        out = add ? out + acc : acc;
      }
    }
  }
}

template <typename T>
T dot_impl(const T* x, const T* y, std::size_t n) {
  using L = Lane<T>;
  typename L::Reg acc0 = L::zero(), acc1 = L::zero(), acc2 = L::zero(), acc3 = L::zero();
  std::size_t i = 0;
  for (; i + 4 * L::kWidth <= n; i += 4 * L::kWidth) {
    acc0 = L::fmadd(L::load(x + i), L::load(y + i), acc0);
    acc1 = L::fmadd(L::load(x + i + L::kWidth), L::load(y + i + L::kWidth), acc1);
    acc2 = L::fmadd(L::load(x + i + 2 * L::kWidth), L::load(y + i + 2 * L::kWidth), acc2);
    acc3 = L::fmadd(L::load(x + i + 3 * L::kWidth), L::load(y + i + 3 * L::kWidth), acc3);
  }
  for (; i + L::kWidth <= n; i += L::kWidth)
    acc0 = L::fmadd(L::load(x + i), L::load(y + i), acc0);
  T total = L::hsum(L::add(L::add(acc0, acc1), L::add(acc2, acc3)));
  for (; i < n; ++i) total = std::fma(x[i], y[i], total);
  return total;
}

template <typename T>
void axpy_impl(T alpha, const T* x, T* y, std::size_t n) {
  using L = Lane<T>;
  const typename L::Reg av = L::broadcast(alpha);
  std::size_t i = 0;
  for (; i + L::kWidth <= n; i += L::kWidth)
    L::store(y + i, L::fmadd(av, L::load(x + i), L::load(y + i)));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

}  // namespace

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixView<T> a, MatrixView<T> b,
          T* c, std::size_t ldc, bool accumulate) {
  gemm_impl<T>(m, n, k, a, b, c, ldc, accumulate);
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  return dot_impl<T>(x, y, n);
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  axpy_impl<T>(alpha, x, y, n);
}

template void gemm<float>(std::size_t, std::size_t, std::size_t, MatrixView<float>,
                          MatrixView<float>, float*, std::size_t, bool);
template void gemm<double>(std::size_t, std::size_t, std::size_t, MatrixView<double>,
                           MatrixView<double>, double*, std::size_t, bool);
template float dot<float>(const float*, const float*, std::size_t);
template double dot<double>(const double*, const double*, std::size_t);
template void axpy<float>(float, const float*, float*, std::size_t);
template void axpy<double>(double, const double*, double*, std::size_t);

}  // namespace scpr::simd::avx2

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "scpr/simd/kernels.hpp"

namespace scpr::simd {
namespace {

bool detect_avx2() noexcept {
#if defined(SCPR_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend initial_backend() noexcept {
  const bool has_avx2 = detect_avx2();
  if (const char* env = std::getenv("SCPR_SIMD")) {
    if (std::string(env) == "scalar") return Backend::kScalar;
  }
  return has_avx2 ? Backend::kAvx2 : Backend::kScalar;
}

std::atomic<Backend>& backend_slot() {
  static std::atomic<Backend> slot{initial_backend()};
  return slot;
}

template <typename T>
std::vector<T>& pack_buffer() {
  thread_local std::vector<T> buffer;
  return buffer;
}

}  // namespace

bool avx2_available() noexcept {
  static const bool available = detect_avx2();
  return available;
}

Backend active_backend() noexcept { return backend_slot().load(std::memory_order_relaxed); }

void set_backend(Backend backend) {
  if (backend == Backend::kAvx2 && !avx2_available())
    throw std::invalid_argument("AVX2 kernels are not available on this machine");
  backend_slot().store(backend, std::memory_order_relaxed);
}

std::string_view backend_name(Backend backend) noexcept {
  return backend == Backend::kAvx2 ? "avx2" : "scalar";
}

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixView<T> a, MatrixView<T> b,
          T* c, std::size_t ldc, bool accumulate) {
#ifdef SCPR_HAVE_AVX2
  if (active_backend() == Backend::kAvx2) {
    if (b.col_stride != 1) {
      auto& packed = pack_buffer<T>();
      packed.resize(k * n);
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j)
          packed[p * n + j] = b.data[p * b.row_stride + j * b.col_stride];
      avx2::gemm<T>(m, n, k, a, MatrixView<T>{packed.data(), n, 1}, c, ldc, accumulate);
      return;
    }
    avx2::gemm<T>(m, n, k, a, b, c, ldc, accumulate);
    return;
  }
#endif
  scalar::gemm<T>(m, n, k, a, b, c, ldc, accumulate);
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
#ifdef SCPR_HAVE_AVX2
  if (active_backend() == Backend::kAvx2) return avx2::dot<T>(x, y, n);
#endif
  return scalar::dot<T>(x, y, n);
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
#ifdef SCPR_HAVE_AVX2
  if (active_backend() == Backend::kAvx2) {
    avx2::axpy<T>(alpha, x, y, n);
    return;
  }
#endif
  scalar::axpy<T>(alpha, x, y, n);
}

template void gemm<float>(std::size_t, std::size_t, std::size_t, MatrixView<float>,
                          MatrixView<float>, float*, std::size_t, bool);
template void gemm<double>(std::size_t, std::size_t, std::size_t, MatrixView<double>,
                           MatrixView<double>, double*, std::size_t, bool);
template float dot<float>(const float*, const float*, std::size_t);
template double dot<double>(const double*, const double*, std::size_t);
template void axpy<float>(float, const float*, float*, std::size_t);
template void axpy<double>(double, const double*, double*, std::size_t);

}  // namespace scpr::simd

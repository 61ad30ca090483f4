#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "scpr/simd/kernels.hpp"

namespace {

using scpr::simd::MatrixView;

template <typename T>
std::vector<T> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return v;
}

template <typename T>
void expect_close(const std::vector<T>& a, const std::vector<T>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    ASSERT_NEAR(a[i], b[i], tol * (1.0 + std::abs(static_cast<double>(b[i])))) << "index " << i;
}

class KernelEquivalence : public ::testing::Test {
 protected:
  void SetUp() override {
    if (!scpr::simd::avx2_available()) GTEST_SKIP() << "AVX2 not available";
  }
};

template <typename T>
void check_gemm(std::size_t m, std::size_t n, std::size_t k, bool transpose_b, bool accumulate,
                double tol) {
  std::mt19937_64 rng(m * 1000003 + n * 1009 + k);
  auto a = random_vector<T>(m * k, rng);
  auto b = random_vector<T>(k * n, rng);
  auto c0 = random_vector<T>(m * n, rng);
  MatrixView<T> av{a.data(), k, 1};
  MatrixView<T> bv = transpose_b ? MatrixView<T>{b.data(), 1, k} : MatrixView<T>{b.data(), n, 1};
  std::vector<T> ref = c0, fast = c0;
  scpr::simd::scalar::gemm<T>(m, n, k, av, bv, ref.data(), n, accumulate);
  scpr::simd::set_backend(scpr::simd::Backend::kAvx2);
  scpr::simd::gemm<T>(m, n, k, av, bv, fast.data(), n, accumulate);
  expect_close(fast, ref, tol * std::sqrt(static_cast<double>(k)));
}

TEST_F(KernelEquivalence, GemmFloatMatchesScalarAcrossShapes) {
  for (std::size_t m : {1, 3, 4, 5, 17})
    for (std::size_t n : {1, 7, 8, 16, 33})
      for (std::size_t k : {1, 9, 300})
        for (bool tb : {false, true}) check_gemm<float>(m, n, k, tb, m % 2 == 1, 1e-6);
}

TEST_F(KernelEquivalence, GemmDoubleMatchesScalarAcrossShapes) {
  for (std::size_t m : {1, 4, 6})
    for (std::size_t n : {1, 4, 8, 13})
      for (std::size_t k : {1, 5, 513})
        for (bool tb : {false, true}) check_gemm<double>(m, n, k, tb, n % 2 == 0, 1e-14);
}

TEST_F(KernelEquivalence, DotAndAxpyMatchScalar) {
  std::mt19937_64 rng(5);
  for (std::size_t n : {0, 1, 7, 8, 31, 64, 1001}) {
    auto x = random_vector<float>(n, rng);
    auto y = random_vector<float>(n, rng);
    EXPECT_NEAR(scpr::simd::avx2::dot<float>(x.data(), y.data(), n),
                scpr::simd::scalar::dot<float>(x.data(), y.data(), n), 1e-5 * (1.0 + n));
    auto y1 = y, y2 = y;
    scpr::simd::avx2::axpy<float>(0.37f, x.data(), y1.data(), n);
    scpr::simd::scalar::axpy<float>(0.37f, x.data(), y2.data(), n);
    expect_close(y1, y2, 1e-6);

    auto xd = random_vector<double>(n, rng);
    auto yd = random_vector<double>(n, rng);
    EXPECT_NEAR(scpr::simd::avx2::dot<double>(xd.data(), yd.data(), n),
                scpr::simd::scalar::dot<double>(xd.data(), yd.data(), n), 1e-13 * (1.0 + n));
  }
}

// Each output row of gemm must not depend on which other rows are computed
// alongside it; the transformer's causal invariance relies on this.
TEST(Kernels, GemmRowsIndependentOfBatchComposition) {
  for (auto backend : {scpr::simd::Backend::kScalar, scpr::simd::Backend::kAvx2}) {
    if (backend == scpr::simd::Backend::kAvx2 && !scpr::simd::avx2_available()) continue;
    scpr::simd::set_backend(backend);
    std::mt19937_64 rng(11);
    const std::size_t m = 9, n = 21, k = 40;
    auto a = random_vector<float>(m * k, rng);
    auto b = random_vector<float>(k * n, rng);
    std::vector<float> full(m * n);
    scpr::simd::gemm<float>(m, n, k, {a.data(), k, 1}, {b.data(), n, 1}, full.data(), n, false);
    for (std::size_t r = 0; r < m; ++r) {
      std::vector<float> one(n);
      scpr::simd::gemm<float>(1, n, k, {a.data() + r * k, k, 1}, {b.data(), n, 1}, one.data(), n,
                              false);
      for (std::size_t j = 0; j < n; ++j) ASSERT_EQ(one[j], full[r * n + j]);
    }
  }
}

TEST(Kernels, ScalarGemmHandComputed) {
  const std::vector<double> a{1, 2, 3, 4};
  const std::vector<double> b{1, 1};
  std::vector<double> c(2);
  scpr::simd::scalar::gemm<double>(2, 1, 2, {a.data(), 2, 1}, {b.data(), 1, 1}, c.data(), 1, false);
  EXPECT_EQ(c[0], 3.0);
  EXPECT_EQ(c[1], 7.0);
}

TEST(Kernels, BackendNames) {
  EXPECT_EQ(scpr::simd::backend_name(scpr::simd::Backend::kScalar), "scalar");
  EXPECT_EQ(scpr::simd::backend_name(scpr::simd::Backend::kAvx2), "avx2");
}

}  // namespace

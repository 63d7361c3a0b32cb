#include <cmath>
#include <vector>

#include <gtest/gtest.h>
#include <omp.h>

#include "geia/kernels.hpp"
#include "geia/rng.hpp"

namespace k = geia::kernels;

namespace {

std::vector<double> random_matrix(std::size_t n, std::uint64_t seed) {
  geia::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

struct Shape {
  std::size_t m, k, n;
};

class KernelAgreement : public ::testing::TestWithParam<Shape> {};

TEST_P(KernelAgreement, ParallelMatchesReferenceBitwise) {
  const auto [m, kk, n] = GetParam();
  const auto a = random_matrix(m * kk, 1);
  const auto b = random_matrix(kk * n, 2);
  const auto bt = random_matrix(n * kk, 3);
  const auto at = random_matrix(kk * m, 4);
  const auto seed_c = random_matrix(m * n, 5);

  for (int threads : {1, 2, 3}) {
    omp_set_num_threads(threads);
    for (bool acc : {false, true}) {
      auto c1 = seed_c, c2 = seed_c;
      k::gemm(a, b, c1, m, kk, n, acc);
      k::reference::gemm(a, b, c2, m, kk, n, acc);
      EXPECT_EQ(c1, c2) << "gemm threads=" << threads;

      c1 = seed_c, c2 = seed_c;
      k::gemm_bt(a, bt, c1, m, kk, n, acc);
      k::reference::gemm_bt(a, bt, c2, m, kk, n, acc);
      EXPECT_EQ(c1, c2) << "gemm_bt threads=" << threads;

      c1 = seed_c, c2 = seed_c;
      k::gemm_at(at, b, c1, m, kk, n, acc);
      k::reference::gemm_at(at, b, c2, m, kk, n, acc);
      EXPECT_EQ(c1, c2) << "gemm_at threads=" << threads;

      std::vector<double> s1(n, 0.5), s2(n, 0.5);
      k::column_sum(seed_c, s1, m, n, acc);
      k::reference::column_sum(seed_c, s2, m, n, acc);
      EXPECT_EQ(s1, s2);
    }
    auto x1 = seed_c, x2 = seed_c;
    const auto bias = random_matrix(n, 6);
    k::add_row_bias(x1, bias, m, n);
    k::reference::add_row_bias(x2, bias, m, n);
    EXPECT_EQ(x1, x2);

    std::vector<double> l1(m * n), l2(m * n);
    k::log_softmax_rows(seed_c, l1, m, n);
    k::reference::log_softmax_rows(seed_c, l2, m, n);
    EXPECT_EQ(l1, l2);
  }
  omp_set_num_threads(omp_get_num_procs());
}

INSTANTIATE_TEST_SUITE_P(Shapes, KernelAgreement,
                         ::testing::Values(Shape{1, 1, 1}, Shape{3, 5, 7}, Shape{17, 8, 33},
                                           Shape{64, 64, 64}, Shape{2, 129, 3}));

TEST(Kernels, GemmMatchesHandProduct) {
  // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
  const std::vector<double> a{1, 2, 3, 4}, b{5, 6, 7, 8};
  std::vector<double> c(4);
  k::gemm(a, b, c, 2, 2, 2);
  EXPECT_EQ(c, (std::vector<double>{19, 22, 43, 50}));
  // A * B^T with B^T given row-major as [5 7; 6 8]
  const std::vector<double> bt{5, 7, 6, 8};
  k::gemm_bt(a, bt, c, 2, 2, 2);
  EXPECT_EQ(c, (std::vector<double>{19, 22, 43, 50}));
  // A^T * B with A^T stored as [1 3; 2 4]
  const std::vector<double> at{1, 3, 2, 4};
  k::gemm_at(at, b, c, 2, 2, 2);
  EXPECT_EQ(c, (std::vector<double>{19, 22, 43, 50}));
  k::gemm(a, b, c, 2, 2, 2, true);
  EXPECT_EQ(c, (std::vector<double>{38, 44, 86, 100}));
}

TEST(Kernels, LogSoftmaxRowsNormalizeAndSurviveLargeLogits) {
  const std::vector<double> x{1000.0, 1001.0, 1002.0, -3.0, 0.0, 3.0};
  std::vector<double> out(6);
  k::log_softmax_rows(x, out, 2, 3);
  for (int r = 0; r < 2; ++r) {
    double s = 0.0;
    for (int j = 0; j < 3; ++j) {
      EXPECT_TRUE(std::isfinite(out[r * 3 + j]));
      s += std::exp(out[r * 3 + j]);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_NEAR(out[2] - out[1], 1.0, 1e-12);
}

}  // namespace

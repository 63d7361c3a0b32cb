#include "geia/kernels.hpp"

#include <cmath>

namespace geia::kernels {

namespace {
// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelThreshold = 1 << 14;
}

void gemm(CSpan a, CSpan b, Span c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
#pragma omp parallel for schedule(static) if (m * k * n > kParallelThreshold)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = cp + i * n;
    if (!accumulate)
      for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ap[i * k + p];
      const double* brow = bp + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_bt(CSpan a, CSpan b, Span c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
#pragma omp parallel for schedule(static) if (m * k * n > kParallelThreshold)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* arow = ap + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = bp + j * k;
      double s = accumulate ? cp[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      cp[i * n + j] = s;
    }
  }
}

void gemm_at(CSpan a, CSpan b, Span c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
#pragma omp parallel for schedule(static) if (m * k * n > kParallelThreshold)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = cp + i * n;
    if (!accumulate)
      for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ap[p * m + i];
      const double* brow = bp + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void add_row_bias(Span x, CSpan bias, std::size_t m, std::size_t n) {
  double* xp = x.data();
  const double* bp = bias.data();
#pragma omp parallel for schedule(static) if (m * n > kParallelThreshold)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t j = 0; j < n; ++j) xp[i * n + j] += bp[j];
  }
}

void column_sum(CSpan x, Span out, std::size_t m, std::size_t n, bool accumulate) {
  const double* xp = x.data();
  double* op = out.data();
#pragma omp parallel for schedule(static) if (m * n > kParallelThreshold)
  for (std::ptrdiff_t jj = 0; jj < static_cast<std::ptrdiff_t>(n); ++jj) {
    const auto j = static_cast<std::size_t>(jj);
    double s = accumulate ? op[j] : 0.0;
    for (std::size_t i = 0; i < m; ++i) s += xp[i * n + j];
    op[j] = s;
  }
}

void log_softmax_rows(CSpan x, Span out, std::size_t m, std::size_t n) {
  const double* xp = x.data();
  double* op = out.data();
#pragma omp parallel for schedule(static) if (m * n > kParallelThreshold)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* row = xp + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) op[i * n + j] = row[j] - lse;
  }
}

}  // namespace geia::kernels

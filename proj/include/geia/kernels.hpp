#pragma once

#include <cstddef>
#include <span>

// Dense row-major kernels used by the attacker models. Two implementations
// share these signatures: geia::kernels (OpenMP, parallel over output rows)
// and geia::kernels::reference (serial). Each output element is reduced in
// the same order by both, so results are bitwise identical for any thread
// count.
namespace geia::kernels {

using Span = std::span<double>;
using CSpan = std::span<const double>;

// C[m,n] (+)= A[m,k] * B[k,n]
void gemm(CSpan a, CSpan b, Span c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate = false);
// C[m,n] (+)= A[m,k] * B[n,k]^T
void gemm_bt(CSpan a, CSpan b, Span c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate = false);
// C[m,n] (+)= A[k,m]^T * B[k,n]
void gemm_at(CSpan a, CSpan b, Span c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate = false);
// X[m,n] += bias[n] on every row
void add_row_bias(Span x, CSpan bias, std::size_t m, std::size_t n);
// out[n] (+)= sum over rows of X[m,n]
void column_sum(CSpan x, Span out, std::size_t m, std::size_t n, bool accumulate = false);
// Row-wise numerically stable log-softmax.
void log_softmax_rows(CSpan x, Span out, std::size_t m, std::size_t n);

namespace reference {
void gemm(CSpan a, CSpan b, Span c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate = false);
void gemm_bt(CSpan a, CSpan b, Span c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate = false);
void gemm_at(CSpan a, CSpan b, Span c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate = false);
void add_row_bias(Span x, CSpan bias, std::size_t m, std::size_t n);
void column_sum(CSpan x, Span out, std::size_t m, std::size_t n, bool accumulate = false);
void log_softmax_rows(CSpan x, Span out, std::size_t m, std::size_t n);
}  // namespace reference

}  // namespace geia::kernels

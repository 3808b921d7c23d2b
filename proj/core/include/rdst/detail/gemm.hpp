#pragma once

#include <cstdint>

namespace rdst::detail {

// Row-major C = alpha * op(A) * op(B) + beta * C.
// A is m x k (or k x m when trans_a), B is k x n (or n x k when trans_b).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, T alpha, const T* a,
          std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c, std::int64_t ldc);

// Global multiply-accumulate counter fed by every gemm call. Used to
// cross-check the analytic cost model against executed work.
void reset_mac_counter();
std::int64_t mac_counter();
void add_macs(std::int64_t macs);

}  // namespace rdst::detail

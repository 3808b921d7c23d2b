#include "rdst/detail/gemm.hpp"

#include <Eigen/Core>
#include <atomic>

namespace rdst::detail {

namespace {

std::atomic<std::int64_t> g_macs{0};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

template <typename T, typename LhsExpr, typename RhsExpr>
void assign(MutMap<T>& c, const LhsExpr& lhs, const RhsExpr& rhs, T alpha, T beta) {
    if (beta == T(0)) {
        if (alpha == T(1)) {
            c.noalias() = lhs * rhs;
        } else {
            c.noalias() = alpha * (lhs * rhs);
        }
    } else {
        if (beta != T(1)) c *= beta;
        if (alpha == T(1)) {
            c.noalias() += lhs * rhs;
        } else {
            c.noalias() += alpha * (lhs * rhs);
        }
    }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, T alpha, const T* a,
          std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c, std::int64_t ldc) {
    add_macs(m * n * k);
    MutMap<T> cm(c, m, n, Eigen::OuterStride<>(ldc));
    ConstMap<T> am(a, trans_a ? k : m, trans_a ? m : k, Eigen::OuterStride<>(lda));
    ConstMap<T> bm(b, trans_b ? n : k, trans_b ? k : n, Eigen::OuterStride<>(ldb));
    if (!trans_a && !trans_b) {
        assign<T>(cm, am, bm, alpha, beta);
    } else if (trans_a && !trans_b) {
        assign<T>(cm, am.transpose(), bm, alpha, beta);
    } else if (!trans_a && trans_b) {
        assign<T>(cm, am, bm.transpose(), alpha, beta);
    } else {
        assign<T>(cm, am.transpose(), bm.transpose(), alpha, beta);
    }
}

template void gemm<float>(bool, bool, std::int64_t, std::int64_t, std::int64_t, float, const float*, std::int64_t,
                          const float*, std::int64_t, float, float*, std::int64_t);
template void gemm<double>(bool, bool, std::int64_t, std::int64_t, std::int64_t, double, const double*,
                           std::int64_t, const double*, std::int64_t, double, double*, std::int64_t);

void reset_mac_counter() { g_macs.store(0); }
std::int64_t mac_counter() { return g_macs.load(); }
void add_macs(std::int64_t macs) { g_macs.fetch_add(macs, std::memory_order_relaxed); }

}  // namespace rdst::detail

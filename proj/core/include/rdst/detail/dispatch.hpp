#pragma once

#include <cmath>
#include <span>
#include <string>

#include "rdst/tensor.hpp"

namespace rdst::detail {

// Calls `fn` with a value of the scalar type matching `dtype`.
template <typename Fn>
decltype(auto) visit_dtype(DType dtype, Fn&& fn) {
    if (dtype == DType::kF64) return fn(double{});
    return fn(float{});
}

template <typename T>
void check_finite(std::span<const T> values, const char* op) {
    if (!finite_checks_enabled()) return;
    for (T v : values) {
        if (!std::isfinite(v)) throw NonFiniteError(std::string("non-finite value produced by ") + op);
    }
}

inline void check_finite(const Tensor& t, const char* op) {
    visit_dtype(t.dtype(), [&](auto tag) {
        using T = decltype(tag);
        check_finite<T>(t.data<T>(), op);
    });
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op);

}  // namespace rdst::detail

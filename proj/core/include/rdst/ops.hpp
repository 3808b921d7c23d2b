#pragma once

#include <cstdint>
#include <vector>

#include "rdst/tensor.hpp"

namespace rdst {

enum class BinaryOp { kAdd, kSub, kMul, kDiv };

/// Trailing-dimension (numpy-style) broadcast of two shapes.
Shape broadcast_shapes(const Shape& a, const Shape& b);

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);
Tensor elementwise(BinaryOp op, const Tensor& a, double b);

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::kAdd, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::kSub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::kMul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::kDiv, a, b); }
inline Tensor add(const Tensor& a, double b) { return elementwise(BinaryOp::kAdd, a, b); }
inline Tensor sub(const Tensor& a, double b) { return elementwise(BinaryOp::kSub, a, b); }
inline Tensor mul(const Tensor& a, double b) { return elementwise(BinaryOp::kMul, a, b); }
inline Tensor div(const Tensor& a, double b) { return elementwise(BinaryOp::kDiv, a, b); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, double b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, double b) { return div(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }

Tensor neg(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Not differentiated; inference-only range limiting.
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);

/// [..., m, k] x [..., k, n] -> [..., m, n] with broadcast batch extents.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, int axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& dims);
Tensor transpose(const Tensor& x, int axis0, int axis1);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length);
/// Torus roll: out[i] = x[(i - shift) mod n] along `axis`.
Tensor roll(const Tensor& x, int axis, std::int64_t shift);
/// Mirror padding without edge repetition; folds repeatedly when the pad
/// exceeds the extent.
Tensor pad_reflect(const Tensor& x, int axis, std::int64_t before, std::int64_t after);
/// Sums broadcast dimensions of `g` down to `shape`.
Tensor reduce_to(const Tensor& g, const Shape& shape);

}  // namespace rdst

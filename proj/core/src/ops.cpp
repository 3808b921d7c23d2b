#include "rdst/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rdst/detail/dispatch.hpp"
#include "rdst/detail/gemm.hpp"
#include "rdst/tape.hpp"

namespace rdst {

using detail::visit_dtype;

namespace {

// Row-major strides of `shape`, right-aligned into `rank` slots with zero
// stride wherever the extent is broadcast.
std::vector<std::int64_t> broadcast_strides(const Shape& shape, const Shape& out) {
    const int rank = static_cast<int>(out.size());
    const int offset = rank - static_cast<int>(shape.size());
    std::vector<std::int64_t> strides(rank, 0);
    std::int64_t s = 1;
    for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
        strides[i + offset] = shape[i] == 1 && out[i + offset] != 1 ? 0 : s;
        s *= shape[i];
    }
    return strides;
}

// Visits every element of `out` in row-major order, handing the matching
// flat offsets into the (broadcast) operands a and b.
template <typename Fn>
void for_each_broadcast(const Shape& out, const std::vector<std::int64_t>& sa, const std::vector<std::int64_t>& sb,
                        Fn&& fn) {
    const int rank = static_cast<int>(out.size());
    if (rank == 0) {
        fn(0, 0, 0);
        return;
    }
    const std::int64_t inner = out[rank - 1];
    const std::int64_t ia = sa[rank - 1];
    const std::int64_t ib = sb[rank - 1];
    std::vector<std::int64_t> idx(rank, 0);
    std::int64_t oa = 0, ob = 0, o = 0;
    const std::int64_t total = numel(out);
    while (o < total) {
        for (std::int64_t j = 0; j < inner; ++j) fn(o + j, oa + j * ia, ob + j * ib);
        o += inner;
        for (int d = rank - 2; d >= 0; --d) {
            ++idx[d];
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < out[d]) break;
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

struct AxisSplit {
    std::int64_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
    AxisSplit s;
    for (int i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

template <typename T, typename Fn>
Tensor map_unary(const Tensor& x, Fn&& fn) {
    Tensor out(x.shape(), x.dtype());
    auto src = x.data<T>();
    auto dst = out.mutable_data<T>();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = fn(src[i]);
    return out;
}

// Elementwise unary op with derivative expressed through (input, output).
template <typename Fwd, typename Deriv>
Tensor unary_op(const Tensor& x, const char* name, Fwd&& fwd, Deriv&& deriv) {
    Tensor out = visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        return map_unary<T>(x, [&](T v) { return static_cast<T>(fwd(static_cast<double>(v))); });
    });
    detail::check_finite(out, name);
    if (any_tracked({x})) {
        record_op(out, {x}, [x, out, deriv](const Tensor& g, GradSlots& slots) {
            Tensor gx(x.shape(), x.dtype());
            visit_dtype(x.dtype(), [&](auto tag) {
                using T = decltype(tag);
                auto xi = x.data<T>();
                auto yo = out.data<T>();
                auto gi = g.data<T>();
                auto go = gx.mutable_data<T>();
                for (std::size_t i = 0; i < xi.size(); ++i) {
                    go[i] = static_cast<T>(gi[i] * deriv(static_cast<double>(xi[i]), static_cast<double>(yo[i])));
                }
            });
            slots.set(0, gx);
        });
    }
    return out;
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::int64_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::int64_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (ea != eb && ea != 1 && eb != 1) {
            throw ShapeError("shapes " + to_string(a) + " and " + to_string(b) + " are not broadcast-compatible");
        }
        out[i] = std::max(ea, eb);
    }
    return out;
}

Tensor reduce_to(const Tensor& g, const Shape& shape) {
    if (g.shape() == shape) return g;
    Tensor out(shape, g.dtype());
    const auto so = broadcast_strides(shape, g.shape());
    const std::vector<std::int64_t> zero(g.shape().size(), 0);
    visit_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = g.data<T>();
        auto dst = out.mutable_data<T>();
        for_each_broadcast(g.shape(), so, zero, [&](std::int64_t o, std::int64_t a, std::int64_t) { dst[a] += src[o]; });
    });
    return out;
}

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
    detail::require_same_dtype(a, b, "elementwise");
    const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
    Tensor out(out_shape, a.dtype());
    visit_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = a.data<T>();
        auto y = b.data<T>();
        auto z = out.mutable_data<T>();
        auto apply = [op](T u, T v) -> T {
            switch (op) {
                case BinaryOp::kAdd: return u + v;
                case BinaryOp::kSub: return u - v;
                case BinaryOp::kMul: return u * v;
                case BinaryOp::kDiv: return u / v;
            }
            return T(0);
        };
        if (a.shape() == b.shape()) {
            for (std::size_t i = 0; i < z.size(); ++i) z[i] = apply(x[i], y[i]);
        } else if (b.numel() == 1 && a.shape() == out_shape) {
            const T v = y[0];
            for (std::size_t i = 0; i < z.size(); ++i) z[i] = apply(x[i], v);
        } else {
            const auto sa = broadcast_strides(a.shape(), out_shape);
            const auto sb = broadcast_strides(b.shape(), out_shape);
            for_each_broadcast(out_shape, sa, sb,
                               [&](std::int64_t o, std::int64_t i, std::int64_t j) { z[o] = apply(x[i], y[j]); });
        }
    });
    detail::check_finite(out, "elementwise");
    if (any_tracked({a, b})) {
        record_op(out, {a, b}, [op, a, b](const Tensor& g, GradSlots& slots) {
            switch (op) {
                case BinaryOp::kAdd:
                    if (slots.needs(0)) slots.set(0, reduce_to(g, a.shape()));
                    if (slots.needs(1)) slots.set(1, reduce_to(g, b.shape()));
                    break;
                case BinaryOp::kSub:
                    if (slots.needs(0)) slots.set(0, reduce_to(g, a.shape()));
                    if (slots.needs(1)) slots.set(1, reduce_to(neg(g), b.shape()));
                    break;
                case BinaryOp::kMul:
                    if (slots.needs(0)) slots.set(0, reduce_to(mul(g, b), a.shape()));
                    if (slots.needs(1)) slots.set(1, reduce_to(mul(g, a), b.shape()));
                    break;
                case BinaryOp::kDiv:
                    if (slots.needs(0)) slots.set(0, reduce_to(div(g, b), a.shape()));
                    if (slots.needs(1)) slots.set(1, reduce_to(neg(div(mul(g, a), mul(b, b))), b.shape()));
                    break;
            }
        });
    }
    return out;
}

Tensor elementwise(BinaryOp op, const Tensor& a, double b) {
    if (op == BinaryOp::kDiv && b == 0.0) throw NonFiniteError("division by scalar zero");
    Tensor out = visit_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T v = static_cast<T>(b);
        switch (op) {
            case BinaryOp::kAdd: return map_unary<T>(a, [v](T u) { return u + v; });
            case BinaryOp::kSub: return map_unary<T>(a, [v](T u) { return u - v; });
            case BinaryOp::kMul: return map_unary<T>(a, [v](T u) { return u * v; });
            case BinaryOp::kDiv: return map_unary<T>(a, [v](T u) { return u / v; });
        }
        return Tensor();
    });
    detail::check_finite(out, "elementwise");
    if (any_tracked({a})) {
        record_op(out, {a}, [op, b](const Tensor& g, GradSlots& slots) {
            switch (op) {
                case BinaryOp::kAdd:
                case BinaryOp::kSub: slots.set(0, g); break;
                case BinaryOp::kMul: slots.set(0, mul(g, b)); break;
                case BinaryOp::kDiv: slots.set(0, div(g, b)); break;
            }
        });
    }
    return out;
}

Tensor neg(const Tensor& x) { return mul(x, -1.0); }

Tensor abs(const Tensor& x) {
    return unary_op(x, "abs", [](double v) { return std::abs(v); },
                    [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
    return unary_op(x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
    return unary_op(x, "sqrt", [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor exp(const Tensor& x) {
    return unary_op(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary_op(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor relu(const Tensor& x) {
    return unary_op(x, "relu", [](double v) { return v > 0 ? v : 0.0; },
                    [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    return visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        return map_unary<T>(x, [lo, hi](T v) { return std::clamp(v, static_cast<T>(lo), static_cast<T>(hi)); });
    });
}

Tensor sum(const Tensor& x) {
    Tensor out = visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto d = x.data<T>();
        // Accumulate in double for both dtypes; keeps reductions order-stable.
        double s = 0.0;
        for (T v : d) s += v;
        return Tensor::scalar(s, x.dtype());
    });
    detail::check_finite(out, "sum");
    if (any_tracked({x})) {
        record_op(out, {x}, [shape = x.shape()](const Tensor& g, GradSlots& slots) {
            slots.set(0, Tensor::full(shape, g.item(), g.dtype()));
        });
    }
    return out;
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
    const int ax = normalize_axis(axis, x.rank());
    const auto sp = split_at(x.shape(), ax);
    Shape keep = x.shape();
    keep[ax] = 1;
    Tensor out(keep, x.dtype());
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = x.data<T>();
        auto dst = out.mutable_data<T>();
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            for (std::int64_t e = 0; e < sp.extent; ++e) {
                const T* row = src.data() + (o * sp.extent + e) * sp.inner;
                T* acc = dst.data() + o * sp.inner;
                for (std::int64_t i = 0; i < sp.inner; ++i) acc[i] += row[i];
            }
        }
    });
    detail::check_finite(out, "sum");
    if (any_tracked({x})) {
        record_op(out, {x}, [shape = x.shape(), keep](const Tensor& g, GradSlots& slots) {
            Tensor expanded = Tensor::zeros(shape, g.dtype());
            slots.set(0, add(expanded, g.with_shape(keep)));
        });
    }
    if (keepdim) return out;
    Shape squeezed = x.shape();
    squeezed.erase(squeezed.begin() + ax);
    return reshape(out, squeezed);
}

Tensor mean(const Tensor& x) { return div(sum(x), static_cast<double>(x.numel())); }

Tensor mean(const Tensor& x, int axis, bool keepdim) {
    const int ax = normalize_axis(axis, x.rank());
    return div(sum(x, ax, keepdim), static_cast<double>(x.shape()[ax]));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_same_dtype(a, b, "matmul");
    if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul requires rank >= 2 operands");
    const std::int64_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
    if (b.dim(-2) != k) {
        throw ShapeError("matmul inner extents differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
    const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
    const Shape batch = broadcast_shapes(a_batch, b_batch);
    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor out(out_shape, a.dtype());
    const auto sa = broadcast_strides(a_batch, batch);
    const auto sb = broadcast_strides(b_batch, batch);

    // Visits (out batch, a batch, b batch) index triples.
    auto for_batches = [&](auto&& fn) {
        if (batch.empty()) {
            fn(0, 0, 0);
            return;
        }
        for_each_broadcast(batch, sa, sb, fn);
    };

    visit_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>().data();
        const T* pb = b.data<T>().data();
        T* pc = out.mutable_data<T>().data();
        if (b_batch.empty() || numel(b_batch) == 1) {
            if (a_batch == batch) {
                // Fold the batch into rows: one large product.
                const std::int64_t rows = numel(batch) * m;
                detail::gemm<T>(false, false, rows, n, k, T(1), pa, k, pb, n, T(0), pc, n);
                return;
            }
        }
        for_batches([&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
            detail::gemm<T>(false, false, m, n, k, T(1), pa + ia * m * k, k, pb + ib * k * n, n, T(0), pc + o * m * n, n);
        });
    });
    detail::check_finite(out, "matmul");

    if (any_tracked({a, b})) {
        record_op(out, {a, b}, [a, b, batch, sa, sb, m, n, k](const Tensor& g, GradSlots& slots) {
            visit_dtype(a.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* pa = a.data<T>().data();
                const T* pb = b.data<T>().data();
                const T* pg = g.data<T>().data();
                Tensor ga, gb;
                T* pga = nullptr;
                T* pgb = nullptr;
                if (slots.needs(0)) {
                    ga = Tensor(a.shape(), a.dtype());
                    pga = ga.mutable_data<T>().data();
                }
                if (slots.needs(1)) {
                    gb = Tensor(b.shape(), b.dtype());
                    pgb = gb.mutable_data<T>().data();
                }
                auto body = [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                    const T* go = pg + o * m * n;
                    // dA = dC * B^T, dB = A^T * dC; accumulate across broadcast batches.
                    if (pga) detail::gemm<T>(false, true, m, k, n, T(1), go, n, pb + ib * k * n, n, T(1), pga + ia * m * k, k);
                    if (pgb) detail::gemm<T>(true, false, k, n, m, T(1), pa + ia * m * k, k, go, n, T(1), pgb + ib * k * n, n);
                };
                if (batch.empty()) {
                    body(0, 0, 0);
                } else {
                    for_each_broadcast(batch, sa, sb, body);
                }
                if (pga) slots.set(0, ga);
                if (pgb) slots.set(1, gb);
            });
        });
    }
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    const int ax = normalize_axis(axis, x.rank());
    const auto sp = split_at(x.shape(), ax);
    Tensor out(x.shape(), x.dtype());
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = x.data<T>();
        auto dst = out.mutable_data<T>();
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            for (std::int64_t i = 0; i < sp.inner; ++i) {
                const std::int64_t base = o * sp.extent * sp.inner + i;
                T mx = -std::numeric_limits<T>::infinity();
                for (std::int64_t e = 0; e < sp.extent; ++e) mx = std::max(mx, src[base + e * sp.inner]);
                T total = 0;
                for (std::int64_t e = 0; e < sp.extent; ++e) {
                    const T v = std::exp(src[base + e * sp.inner] - mx);
                    dst[base + e * sp.inner] = v;
                    total += v;
                }
                const T inv = T(1) / total;
                for (std::int64_t e = 0; e < sp.extent; ++e) dst[base + e * sp.inner] *= inv;
            }
        }
    });
    detail::check_finite(out, "softmax");
    if (any_tracked({x})) {
        record_op(out, {x}, [out, sp](const Tensor& g, GradSlots& slots) {
            Tensor gx(out.shape(), out.dtype());
            visit_dtype(out.dtype(), [&](auto tag) {
                using T = decltype(tag);
                auto y = out.data<T>();
                auto gy = g.data<T>();
                auto gd = gx.mutable_data<T>();
                for (std::int64_t o = 0; o < sp.outer; ++o) {
                    for (std::int64_t i = 0; i < sp.inner; ++i) {
                        const std::int64_t base = o * sp.extent * sp.inner + i;
                        T dot = 0;
                        for (std::int64_t e = 0; e < sp.extent; ++e) dot += gy[base + e * sp.inner] * y[base + e * sp.inner];
                        for (std::int64_t e = 0; e < sp.extent; ++e) {
                            const auto p = base + e * sp.inner;
                            gd[p] = y[p] * (gy[p] - dot);
                        }
                    }
                }
            });
            slots.set(0, gx);
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    Tensor out = x.with_shape(std::move(shape));
    if (any_tracked({x})) {
        record_op(out, {x}, [orig = x.shape()](const Tensor& g, GradSlots& slots) { slots.set(0, g.with_shape(orig)); });
    }
    return out;
}

Tensor permute(const Tensor& x, const std::vector<int>& dims) {
    const int rank = x.rank();
    if (static_cast<int>(dims.size()) != rank) throw ShapeError("permute: wrong number of dims");
    std::vector<int> perm(rank);
    std::vector<bool> seen(rank, false);
    for (int i = 0; i < rank; ++i) {
        perm[i] = normalize_axis(dims[i], rank);
        if (seen[perm[i]]) throw ShapeError("permute: repeated axis");
        seen[perm[i]] = true;
    }
    Shape out_shape(rank);
    std::vector<std::int64_t> in_strides(rank), src_strides(rank);
    std::int64_t s = 1;
    for (int i = rank - 1; i >= 0; --i) {
        in_strides[i] = s;
        s *= x.shape()[i];
    }
    for (int i = 0; i < rank; ++i) {
        out_shape[i] = x.shape()[perm[i]];
        src_strides[i] = in_strides[perm[i]];
    }
    Tensor out(out_shape, x.dtype());
    const std::vector<std::int64_t> zero(rank, 0);
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = x.data<T>();
        auto dst = out.mutable_data<T>();
        for_each_broadcast(out_shape, src_strides, zero, [&](std::int64_t o, std::int64_t i, std::int64_t) { dst[o] = src[i]; });
    });
    if (any_tracked({x})) {
        std::vector<int> inverse(rank);
        for (int i = 0; i < rank; ++i) inverse[perm[i]] = i;
        record_op(out, {x}, [inverse](const Tensor& g, GradSlots& slots) { slots.set(0, permute(g, inverse)); });
    }
    return out;
}

Tensor transpose(const Tensor& x, int axis0, int axis1) {
    std::vector<int> dims(x.rank());
    std::iota(dims.begin(), dims.end(), 0);
    std::swap(dims[normalize_axis(axis0, x.rank())], dims[normalize_axis(axis1, x.rank())]);
    return permute(x, dims);
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat of zero tensors");
    const int ax = normalize_axis(axis, xs[0].rank());
    Shape out_shape = xs[0].shape();
    out_shape[ax] = 0;
    for (const auto& t : xs) {
        detail::require_same_dtype(xs[0], t, "concat");
        if (t.rank() != xs[0].rank()) throw ShapeError("concat rank mismatch");
        for (int d = 0; d < t.rank(); ++d) {
            if (d != ax && t.shape()[d] != xs[0].shape()[d]) {
                throw ShapeError("concat extent mismatch: " + to_string(t.shape()) + " vs " + to_string(xs[0].shape()));
            }
        }
        out_shape[ax] += t.shape()[ax];
    }
    Tensor out(out_shape, xs[0].dtype());
    const auto sp = split_at(out_shape, ax);
    visit_dtype(out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto dst = out.mutable_data<T>();
        std::int64_t offset = 0;
        for (const auto& t : xs) {
            auto src = t.data<T>();
            const std::int64_t len = t.shape()[ax] * sp.inner;
            for (std::int64_t o = 0; o < sp.outer; ++o) {
                std::copy_n(src.data() + o * len, len, dst.data() + o * sp.extent * sp.inner + offset);
            }
            offset += len;
        }
    });
    if (any_tracked(xs)) {
        std::vector<std::int64_t> extents;
        for (const auto& t : xs) extents.push_back(t.shape()[ax]);
        record_op(out, xs, [ax, extents](const Tensor& g, GradSlots& slots) {
            std::int64_t start = 0;
            for (std::size_t i = 0; i < extents.size(); ++i) {
                if (slots.needs(i)) slots.set(i, slice(g, ax, start, extents[i]));
                start += extents[i];
            }
        });
    }
    return out;
}

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
    const int ax = normalize_axis(axis, x.rank());
    if (start < 0 || length <= 0 || start + length > x.shape()[ax]) {
        throw ShapeError("slice out of range on axis " + std::to_string(ax) + " of " + to_string(x.shape()));
    }
    Shape out_shape = x.shape();
    out_shape[ax] = length;
    Tensor out(out_shape, x.dtype());
    const auto sp = split_at(x.shape(), ax);
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = x.data<T>();
        auto dst = out.mutable_data<T>();
        const std::int64_t len = length * sp.inner;
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            std::copy_n(src.data() + (o * sp.extent + start) * sp.inner, len, dst.data() + o * len);
        }
    });
    if (any_tracked({x})) {
        record_op(out, {x}, [shape = x.shape(), sp, start, length](const Tensor& g, GradSlots& slots) {
            Tensor gx(shape, g.dtype());
            visit_dtype(g.dtype(), [&](auto tag) {
                using T = decltype(tag);
                auto src = g.data<T>();
                auto dst = gx.mutable_data<T>();
                const std::int64_t len = length * sp.inner;
                for (std::int64_t o = 0; o < sp.outer; ++o) {
                    std::copy_n(src.data() + o * len, len, dst.data() + (o * sp.extent + start) * sp.inner);
                }
            });
            slots.set(0, gx);
        });
    }
    return out;
}

Tensor roll(const Tensor& x, int axis, std::int64_t shift) {
    const int ax = normalize_axis(axis, x.rank());
    const auto sp = split_at(x.shape(), ax);
    const std::int64_t n = sp.extent;
    const std::int64_t s = ((shift % n) + n) % n;
    if (s == 0) return x;
    Tensor out(x.shape(), x.dtype());
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = x.data<T>();
        auto dst = out.mutable_data<T>();
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            for (std::int64_t e = 0; e < n; ++e) {
                const std::int64_t from = (e - s + n) % n;
                std::copy_n(src.data() + (o * n + from) * sp.inner, sp.inner, dst.data() + (o * n + e) * sp.inner);
            }
        }
    });
    if (any_tracked({x})) {
        record_op(out, {x}, [ax, s](const Tensor& g, GradSlots& slots) { slots.set(0, roll(g, ax, -s)); });
    }
    return out;
}

namespace {
std::int64_t mirror_index(std::int64_t i, std::int64_t n) {
    if (n == 1) return 0;
    const std::int64_t period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}
}  // namespace

Tensor pad_reflect(const Tensor& x, int axis, std::int64_t before, std::int64_t after) {
    if (before < 0 || after < 0) throw ShapeError("pad_reflect: negative pad");
    if (before == 0 && after == 0) return x;
    const int ax = normalize_axis(axis, x.rank());
    const auto sp = split_at(x.shape(), ax);
    const std::int64_t n = sp.extent;
    const std::int64_t m = n + before + after;
    Shape out_shape = x.shape();
    out_shape[ax] = m;
    Tensor out(out_shape, x.dtype());
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = x.data<T>();
        auto dst = out.mutable_data<T>();
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            for (std::int64_t e = 0; e < m; ++e) {
                const std::int64_t from = mirror_index(e - before, n);
                std::copy_n(src.data() + (o * n + from) * sp.inner, sp.inner, dst.data() + (o * m + e) * sp.inner);
            }
        }
    });
    if (any_tracked({x})) {
        record_op(out, {x}, [shape = x.shape(), sp, before, m](const Tensor& g, GradSlots& slots) {
            Tensor gx(shape, g.dtype());
            visit_dtype(g.dtype(), [&](auto tag) {
                using T = decltype(tag);
                auto src = g.data<T>();
                auto dst = gx.mutable_data<T>();
                const std::int64_t n = sp.extent;
                for (std::int64_t o = 0; o < sp.outer; ++o) {
                    for (std::int64_t e = 0; e < m; ++e) {
                        const std::int64_t to = mirror_index(e - before, n);
                        const T* s = src.data() + (o * m + e) * sp.inner;
                        T* d = dst.data() + (o * n + to) * sp.inner;
                        for (std::int64_t i = 0; i < sp.inner; ++i) d[i] += s[i];
                    }
                }
            });
            slots.set(0, gx);
        });
    }
    return out;
}

}  // namespace rdst

#include "rdst/nn.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

#include "rdst/detail/dispatch.hpp"
#include "rdst/detail/gemm.hpp"
#include "rdst/ops.hpp"
#include "rdst/tape.hpp"

namespace rdst::nn {

using detail::gemm;
using detail::visit_dtype;
using rdst::to_string;

namespace {

template <typename T>
void im2col(const T* x, std::int64_t c, std::int64_t h, std::int64_t w, int k, int stride, int pad, std::int64_t ho,
            std::int64_t wo, T* col) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                T* row = col + ((ch * k + ki) * k + kj) * ho * wo;
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                    const std::int64_t iy = oy * stride - pad + ki;
                    T* dst = row + oy * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill_n(dst, wo, T(0));
                        continue;
                    }
                    const T* src = x + (ch * h + iy) * w;
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const std::int64_t ix = ox * stride - pad + kj;
                        dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, std::int64_t c, std::int64_t h, std::int64_t w, int k, int stride, int pad, std::int64_t ho,
            std::int64_t wo, T* x) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const T* row = col + ((ch * k + ki) * k + kj) * ho * wo;
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                    const std::int64_t iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) continue;
                    T* dst = x + (ch * h + iy) * w;
                    const T* src = row + oy * wo;
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const std::int64_t ix = ox * stride - pad + kj;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

void require_rank(const Tensor& t, int rank, const char* op) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(t.shape()));
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    require_rank(x, 4, "conv2d input");
    require_rank(w, 4, "conv2d weight");
    detail::require_same_dtype(x, w, "conv2d");
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::int64_t cout = w.dim(0);
    const int k = static_cast<int>(w.dim(2));
    if (w.dim(1) != c) {
        throw ShapeError("conv2d: input has " + std::to_string(c) + " channels, weight expects " + std::to_string(w.dim(1)));
    }
    if (w.dim(3) != k) throw ShapeError("conv2d: only square kernels are supported");
    if (stride < 1 || pad < 0) throw ShapeError("conv2d: invalid stride or padding");
    if (b.defined() && (b.rank() != 1 || b.dim(0) != cout)) throw ShapeError("conv2d: bias shape mismatch");
    const std::int64_t ho = (h + 2 * pad - k) / stride + 1;
    const std::int64_t wo = (wd + 2 * pad - k) / stride + 1;
    if (h + 2 * pad < k || wd + 2 * pad < k || ho < 1 || wo < 1) throw ShapeError("conv2d: kernel does not fit input");

    const std::int64_t kk = c * k * k, p = ho * wo;
    const bool direct = k == 1 && stride == 1 && pad == 0;
    Tensor out({n, cout, ho, wo}, x.dtype());
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = x.data<T>().data();
        const T* pw = w.data<T>().data();
        T* po = out.mutable_data<T>().data();
        std::vector<T> col(direct ? 0 : static_cast<std::size_t>(kk * p));
        for (std::int64_t i = 0; i < n; ++i) {
            const T* xn = px + i * c * h * wd;
            const T* cp = xn;
            if (!direct) {
                im2col(xn, c, h, wd, k, stride, pad, ho, wo, col.data());
                cp = col.data();
            }
            T* on = po + i * cout * p;
            T beta = T(0);
            if (b.defined()) {
                const T* pb = b.data<T>().data();
                for (std::int64_t co = 0; co < cout; ++co) std::fill_n(on + co * p, p, pb[co]);
                beta = T(1);
            }
            gemm<T>(false, false, cout, p, kk, T(1), pw, kk, cp, p, beta, on, p);
        }
    });
    detail::check_finite(out, "conv2d");

    std::vector<Tensor> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    if (any_tracked(inputs)) {
        record_op(out, inputs, [x, w, has_b = b.defined(), n, c, h, wd, cout, k, stride, pad, ho, wo, kk, p,
                                direct](const Tensor& g, GradSlots& slots) {
            visit_dtype(x.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* px = x.data<T>().data();
                const T* pw = w.data<T>().data();
                const T* pg = g.data<T>().data();
                Tensor gx, gw, gb;
                if (slots.needs(0)) gx = Tensor(x.shape(), x.dtype());
                if (slots.needs(1)) gw = Tensor(w.shape(), w.dtype());
                if (has_b && slots.needs(2)) gb = Tensor({cout}, w.dtype());
                std::vector<T> col(direct ? 0 : static_cast<std::size_t>(kk * p));
                for (std::int64_t i = 0; i < n; ++i) {
                    const T* gn = pg + i * cout * p;
                    const T* xn = px + i * c * h * wd;
                    if (gw.defined()) {
                        const T* cp = xn;
                        if (!direct) {
                            im2col(xn, c, h, wd, k, stride, pad, ho, wo, col.data());
                            cp = col.data();
                        }
                        gemm<T>(false, true, cout, kk, p, T(1), gn, p, cp, p, T(1), gw.mutable_data<T>().data(), kk);
                    }
                    if (gx.defined()) {
                        T* gxn = gx.mutable_data<T>().data() + i * c * h * wd;
                        if (direct) {
                            gemm<T>(true, false, kk, p, cout, T(1), pw, kk, gn, p, T(0), gxn, p);
                        } else {
                            gemm<T>(true, false, kk, p, cout, T(1), pw, kk, gn, p, T(0), col.data(), p);
                            col2im(col.data(), c, h, wd, k, stride, pad, ho, wo, gxn);
                        }
                    }
                    if (gb.defined()) {
                        T* pgb = gb.mutable_data<T>().data();
                        for (std::int64_t co = 0; co < cout; ++co) {
                            T s = 0;
                            for (std::int64_t j = 0; j < p; ++j) s += gn[co * p + j];
                            pgb[co] += s;
                        }
                    }
                }
                if (gx.defined()) slots.set(0, gx);
                if (gw.defined()) slots.set(1, gw);
                if (gb.defined()) slots.set(2, gb);
            });
        });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank(w, 2, "linear weight");
    detail::require_same_dtype(x, w, "linear");
    if (x.rank() < 1) throw ShapeError("linear: scalar input");
    const std::int64_t din = w.dim(0), dout = w.dim(1);
    if (x.dim(-1) != din) {
        throw ShapeError("linear: input width " + std::to_string(x.dim(-1)) + " vs weight " + to_string(w.shape()));
    }
    if (b.defined() && (b.rank() != 1 || b.dim(0) != dout)) throw ShapeError("linear: bias shape mismatch");
    const std::int64_t rows = x.numel() / din;
    Shape out_shape = x.shape();
    out_shape.back() = dout;
    Tensor out(out_shape, x.dtype());
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T* po = out.mutable_data<T>().data();
        T beta = T(0);
        if (b.defined()) {
            const T* pb = b.data<T>().data();
            for (std::int64_t r = 0; r < rows; ++r) std::copy_n(pb, dout, po + r * dout);
            beta = T(1);
        }
        gemm<T>(false, false, rows, dout, din, T(1), x.data<T>().data(), din, w.data<T>().data(), dout, beta, po, dout);
    });
    detail::check_finite(out, "linear");

    std::vector<Tensor> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    if (any_tracked(inputs)) {
        record_op(out, inputs, [x, w, has_b = b.defined(), rows, din, dout](const Tensor& g, GradSlots& slots) {
            visit_dtype(x.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* pg = g.data<T>().data();
                if (slots.needs(0)) {
                    Tensor gx(x.shape(), x.dtype());
                    gemm<T>(false, true, rows, din, dout, T(1), pg, dout, w.data<T>().data(), dout, T(0),
                            gx.mutable_data<T>().data(), din);
                    slots.set(0, gx);
                }
                if (slots.needs(1)) {
                    Tensor gw(w.shape(), w.dtype());
                    gemm<T>(true, false, din, dout, rows, T(1), x.data<T>().data(), din, pg, dout, T(0),
                            gw.mutable_data<T>().data(), dout);
                    slots.set(1, gw);
                }
                if (has_b && slots.needs(2)) {
                    Tensor gb({dout}, x.dtype());
                    T* pb = gb.mutable_data<T>().data();
                    for (std::int64_t r = 0; r < rows; ++r) {
                        for (std::int64_t j = 0; j < dout; ++j) pb[j] += pg[r * dout + j];
                    }
                    slots.set(2, gb);
                }
            });
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::int64_t d = x.dim(-1);
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) throw ShapeError("layer_norm: affine shape mismatch");
    detail::require_same_dtype(x, gamma, "layer_norm");
    const std::int64_t rows = x.numel() / d;
    Tensor out(x.shape(), x.dtype());
    Tensor xhat(x.shape(), x.dtype());
    Tensor rstd({rows}, x.dtype());
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = x.data<T>().data();
        const T* pg = gamma.data<T>().data();
        const T* pb = beta.data<T>().data();
        T* po = out.mutable_data<T>().data();
        T* ph = xhat.mutable_data<T>().data();
        T* pr = rstd.mutable_data<T>().data();
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* xr = px + r * d;
            double mean = 0;
            for (std::int64_t i = 0; i < d; ++i) mean += xr[i];
            mean /= static_cast<double>(d);
            double var = 0;
            for (std::int64_t i = 0; i < d; ++i) {
                const double t = xr[i] - mean;
                var += t * t;
            }
            var /= static_cast<double>(d);
            const T rs = static_cast<T>(1.0 / std::sqrt(var + eps));
            pr[r] = rs;
            for (std::int64_t i = 0; i < d; ++i) {
                const T hv = static_cast<T>(xr[i] - mean) * rs;
                ph[r * d + i] = hv;
                po[r * d + i] = hv * pg[i] + pb[i];
            }
        }
    });
    detail::check_finite(out, "layer_norm");
    if (any_tracked({x, gamma, beta})) {
        record_op(out, {x, gamma, beta}, [xhat, rstd, gamma, rows, d](const Tensor& g, GradSlots& slots) {
            visit_dtype(g.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* pg = g.data<T>().data();
                const T* ph = xhat.data<T>().data();
                const T* pr = rstd.data<T>().data();
                const T* gam = gamma.data<T>().data();
                Tensor gx, ggam, gbeta;
                if (slots.needs(0)) gx = Tensor(xhat.shape(), g.dtype());
                if (slots.needs(1)) ggam = Tensor({d}, g.dtype());
                if (slots.needs(2)) gbeta = Tensor({d}, g.dtype());
                for (std::int64_t r = 0; r < rows; ++r) {
                    const T* gr = pg + r * d;
                    const T* hr = ph + r * d;
                    if (gx.defined()) {
                        T m1 = 0, m2 = 0;
                        for (std::int64_t i = 0; i < d; ++i) {
                            const T dh = gr[i] * gam[i];
                            m1 += dh;
                            m2 += dh * hr[i];
                        }
                        m1 /= static_cast<T>(d);
                        m2 /= static_cast<T>(d);
                        T* gxr = gx.mutable_data<T>().data() + r * d;
                        for (std::int64_t i = 0; i < d; ++i) gxr[i] = pr[r] * (gr[i] * gam[i] - m1 - hr[i] * m2);
                    }
                    if (ggam.defined()) {
                        T* pgg = ggam.mutable_data<T>().data();
                        for (std::int64_t i = 0; i < d; ++i) pgg[i] += gr[i] * hr[i];
                    }
                    if (gbeta.defined()) {
                        T* pgb = gbeta.mutable_data<T>().data();
                        for (std::int64_t i = 0; i < d; ++i) pgb[i] += gr[i];
                    }
                }
                if (gx.defined()) slots.set(0, gx);
                if (ggam.defined()) slots.set(1, ggam);
                if (gbeta.defined()) slots.set(2, gbeta);
            });
        });
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    Tensor out(x.shape(), x.dtype());
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = x.data<T>();
        auto dst = out.mutable_data<T>();
        for (std::size_t i = 0; i < src.size(); ++i) {
            const T v = src[i];
            dst[i] = v * T(0.5) * (T(1) + std::erf(v * T(kInvSqrt2)));
        }
    });
    detail::check_finite(out, "gelu");
    if (any_tracked({x})) {
        record_op(out, {x}, [x](const Tensor& g, GradSlots& slots) {
            Tensor gx(x.shape(), x.dtype());
            visit_dtype(x.dtype(), [&](auto tag) {
                using T = decltype(tag);
                auto src = x.data<T>();
                auto gi = g.data<T>();
                auto go = gx.mutable_data<T>();
                for (std::size_t i = 0; i < src.size(); ++i) {
                    const T v = src[i];
                    const T cdf = T(0.5) * (T(1) + std::erf(v * T(kInvSqrt2)));
                    const T pdf = T(kInvSqrt2Pi) * std::exp(T(-0.5) * v * v);
                    go[i] = gi[i] * (cdf + v * pdf);
                }
            });
            slots.set(0, gx);
        });
    }
    return out;
}

namespace {

// Moves values between [N, C r^2, H, W] and [N, C, rH, rW].
Tensor shuffle_impl(const Tensor& x, int r, bool to_space) {
    require_rank(x, 4, to_space ? "pixel_shuffle" : "pixel_unshuffle");
    if (r < 1) throw ShapeError("pixel shuffle factor must be positive");
    const std::int64_t n = x.dim(0);
    std::int64_t c, h, w;
    if (to_space) {
        if (x.dim(1) % (r * r) != 0) {
            throw ShapeError("pixel_shuffle: " + std::to_string(x.dim(1)) + " channels not divisible by r^2 = " +
                             std::to_string(r * r));
        }
        c = x.dim(1) / (r * r);
        h = x.dim(2);
        w = x.dim(3);
    } else {
        if (x.dim(2) % r != 0 || x.dim(3) % r != 0) throw ShapeError("pixel_unshuffle: extents not divisible by r");
        c = x.dim(1);
        h = x.dim(2) / r;
        w = x.dim(3) / r;
    }
    Tensor out(to_space ? Shape{n, c, h * r, w * r} : Shape{n, c * r * r, h, w}, x.dtype());
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* src = x.data<T>().data();
        T* dst = out.mutable_data<T>().data();
        const std::int64_t big_w = w * r;
        for (std::int64_t b = 0; b < n; ++b) {
            for (std::int64_t ch = 0; ch < c; ++ch) {
                for (int a = 0; a < r; ++a) {
                    for (int bb = 0; bb < r; ++bb) {
                        const std::int64_t packed = ((b * c + ch) * r * r + a * r + bb) * h * w;
                        const std::int64_t spatial = (b * c + ch) * h * r * big_w;
                        for (std::int64_t i = 0; i < h; ++i) {
                            for (std::int64_t j = 0; j < w; ++j) {
                                const std::int64_t pi = packed + i * w + j;
                                const std::int64_t si = spatial + (i * r + a) * big_w + j * r + bb;
                                if (to_space) {
                                    dst[si] = src[pi];
                                } else {
                                    dst[pi] = src[si];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    if (any_tracked({x})) {
        record_op(out, {x}, [r, to_space](const Tensor& g, GradSlots& slots) { slots.set(0, shuffle_impl(g, r, !to_space)); });
    }
    return out;
}

}  // namespace

Tensor pixel_shuffle(const Tensor& x, int r) { return shuffle_impl(x, r, true); }
Tensor pixel_unshuffle(const Tensor& x, int r) { return shuffle_impl(x, r, false); }

Tensor upsample_nearest(const Tensor& x, int factor) {
    require_rank(x, 4, "upsample_nearest");
    if (factor < 1) throw ShapeError("upsample factor must be positive");
    if (factor == 1) return x;
    const std::int64_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t ho = h * factor, wo = w * factor;
    Tensor out({x.dim(0), x.dim(1), ho, wo}, x.dtype());
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* src = x.data<T>().data();
        T* dst = out.mutable_data<T>().data();
        for (std::int64_t p = 0; p < nc; ++p) {
            for (std::int64_t y = 0; y < ho; ++y) {
                const T* sr = src + (p * h + y / factor) * w;
                T* dr = dst + (p * ho + y) * wo;
                for (std::int64_t xx = 0; xx < wo; ++xx) dr[xx] = sr[xx / factor];
            }
        }
    });
    if (any_tracked({x})) {
        record_op(out, {x}, [shape = x.shape(), nc, h, w, factor, ho, wo](const Tensor& g, GradSlots& slots) {
            Tensor gx(shape, g.dtype());
            visit_dtype(g.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* src = g.data<T>().data();
                T* dst = gx.mutable_data<T>().data();
                for (std::int64_t p = 0; p < nc; ++p) {
                    for (std::int64_t y = 0; y < ho; ++y) {
                        const T* sr = src + (p * ho + y) * wo;
                        T* dr = dst + (p * h + y / factor) * w;
                        for (std::int64_t xx = 0; xx < wo; ++xx) dr[xx / factor] += sr[xx];
                    }
                }
            });
            slots.set(0, gx);
        });
    }
    return out;
}

Tensor nchw_to_nhwc(const Tensor& x) {
    require_rank(x, 4, "nchw_to_nhwc");
    return permute(x, {0, 2, 3, 1});
}

Tensor nhwc_to_nchw(const Tensor& x) {
    require_rank(x, 4, "nhwc_to_nchw");
    return permute(x, {0, 3, 1, 2});
}

Tensor kaiming_uniform(const Shape& shape, std::int64_t fan_in, std::uint64_t seed, DType dtype) {
    if (fan_in <= 0) throw std::invalid_argument("kaiming_uniform: fan_in must be positive");
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> v(static_cast<std::size_t>(numel(shape)));
    for (auto& e : v) e = u(rng);
    return Tensor::from_values(shape, v, dtype);
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& name) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : name) {
        h ^= c;
        h *= 1099511628211ull;
    }
    // splitmix64 finaliser over the combined value
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (h | 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::kConv2d: return "conv2d";
        case LayerKind::kLinear: return "linear";
        case LayerKind::kLayerNorm: return "layernorm";
        case LayerKind::kGelu: return "gelu";
        case LayerKind::kPixelShuffle: return "pixel-shuffle";
        case LayerKind::kPool: return "pool";
        case LayerKind::kUpsample: return "upsample";
        case LayerKind::kAttention: return "attention";
    }
    return "?";
}

LayerSpec LayerSpec::conv(std::int64_t cin, std::int64_t cout, int k, int stride, int pad, bool bias) {
    LayerSpec s;
    s.kind = LayerKind::kConv2d;
    s.in_channels = cin;
    s.out_channels = cout;
    s.kernel = k;
    s.stride = stride;
    s.padding = pad < 0 ? k / 2 : pad;
    s.bias = bias;
    return s;
}

LayerSpec LayerSpec::linear(std::int64_t din, std::int64_t dout, bool bias) {
    LayerSpec s;
    s.kind = LayerKind::kLinear;
    s.in_channels = din;
    s.out_channels = dout;
    s.bias = bias;
    return s;
}

LayerSpec LayerSpec::norm(std::int64_t d) {
    LayerSpec s;
    s.kind = LayerKind::kLayerNorm;
    s.in_channels = s.out_channels = d;
    return s;
}

LayerSpec LayerSpec::gelu(std::int64_t d) {
    LayerSpec s;
    s.kind = LayerKind::kGelu;
    s.in_channels = s.out_channels = d;
    s.bias = false;
    return s;
}

LayerSpec LayerSpec::shuffle(std::int64_t cin, int r) {
    if (cin % (r * r) != 0) throw ShapeError("pixel-shuffle input channels must be divisible by r^2");
    LayerSpec s;
    s.kind = LayerKind::kPixelShuffle;
    s.in_channels = cin;
    s.out_channels = cin / (r * r);
    s.factor = r;
    s.bias = false;
    return s;
}

LayerSpec LayerSpec::upsample(std::int64_t c, int factor) {
    LayerSpec s;
    s.kind = LayerKind::kUpsample;
    s.in_channels = s.out_channels = c;
    s.factor = factor;
    s.bias = false;
    return s;
}

LayerSpec LayerSpec::attention(std::int64_t c, std::int64_t heads, std::int64_t window_tokens,
                               std::int64_t relpos_entries) {
    LayerSpec s;
    s.kind = LayerKind::kAttention;
    s.in_channels = s.out_channels = c;
    s.heads = heads;
    s.window_tokens = window_tokens;
    s.relpos_entries = relpos_entries;
    s.bias = false;
    return s;
}

std::int64_t LayerSpec::params() const {
    switch (kind) {
        case LayerKind::kConv2d:
            return static_cast<std::int64_t>(kernel) * kernel * in_channels * out_channels + (bias ? out_channels : 0);
        case LayerKind::kLinear: return in_channels * out_channels + (bias ? out_channels : 0);
        case LayerKind::kLayerNorm: return 2 * in_channels;
        case LayerKind::kAttention: return relpos_entries * heads;
        default: return 0;
    }
}

FeatureShape output_shape(const LayerSpec& spec, const FeatureShape& in) {
    if (in.c != spec.in_channels) {
        throw ShapeError(to_string(spec.kind) + ": input has " + std::to_string(in.c) + " channels, layer expects " +
                         std::to_string(spec.in_channels));
    }
    FeatureShape out = in;
    out.c = spec.out_channels;
    switch (spec.kind) {
        case LayerKind::kConv2d:
            out.h = (in.h + 2 * spec.padding - spec.kernel) / spec.stride + 1;
            out.w = (in.w + 2 * spec.padding - spec.kernel) / spec.stride + 1;
            if (out.h < 1 || out.w < 1) throw ShapeError("conv2d: kernel does not fit input");
            break;
        case LayerKind::kPixelShuffle:
        case LayerKind::kUpsample:
            out.h = in.h * spec.factor;
            out.w = in.w * spec.factor;
            break;
        case LayerKind::kPool:
            out.h = in.h / spec.factor;
            out.w = in.w / spec.factor;
            break;
        default: break;
    }
    return out;
}

std::int64_t layer_macs(const LayerSpec& spec, const FeatureShape& in) {
    const FeatureShape out = output_shape(spec, in);
    switch (spec.kind) {
        case LayerKind::kConv2d:
            return static_cast<std::int64_t>(spec.kernel) * spec.kernel * spec.in_channels * spec.out_channels * out.h *
                   out.w * out.n;
        case LayerKind::kLinear: return spec.in_channels * spec.out_channels * in.n * in.h * in.w;
        case LayerKind::kAttention:
            // QK^T and AV: each T x T x (c / heads) per head per window.
            return 2 * spec.window_tokens * spec.in_channels * in.n * in.h * in.w;
        default: return 0;
    }
}

FeatureShape CostReport::add(const std::string& name, const LayerSpec& spec, const FeatureShape& in) {
    const FeatureShape out = output_shape(spec, in);
    entries.push_back({name, spec.kind, spec.params(), layer_macs(spec, in)});
    return out;
}

void CostReport::add_raw(const std::string& name, LayerKind kind, std::int64_t params, std::int64_t macs) {
    entries.push_back({name, kind, params, macs});
}

std::int64_t CostReport::total_params() const {
    std::int64_t s = 0;
    for (const auto& e : entries) s += e.params;
    return s;
}

std::int64_t CostReport::total_macs() const {
    std::int64_t s = 0;
    for (const auto& e : entries) s += e.macs;
    return s;
}

CostReport CostReport::grouped(int depth) const {
    CostReport out;
    std::map<std::string, std::size_t> slot;
    for (const auto& e : entries) {
        std::size_t pos = 0;
        for (int i = 0; i < depth && pos != std::string::npos; ++i) {
            pos = e.name.find('.', i == 0 ? 0 : pos + 1);
        }
        const std::string key = pos == std::string::npos ? e.name : e.name.substr(0, pos);
        auto it = slot.find(key);
        if (it == slot.end()) {
            slot[key] = out.entries.size();
            out.entries.push_back({key, e.kind, e.params, e.macs});
        } else {
            out.entries[it->second].params += e.params;
            out.entries[it->second].macs += e.macs;
        }
    }
    return out;
}

std::string CostReport::to_text() const {
    std::size_t width = 5;
    for (const auto& e : entries) width = std::max(width, e.name.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(width)) << "layer" << "  " << std::setw(13) << "kind" << std::right
       << std::setw(12) << "params" << std::setw(16) << "MACs" << '\n';
    for (const auto& e : entries) {
        os << std::left << std::setw(static_cast<int>(width)) << e.name << "  " << std::setw(13) << to_string(e.kind)
           << std::right << std::setw(12) << e.params << std::setw(16) << e.macs << '\n';
    }
    os << std::left << std::setw(static_cast<int>(width)) << "total" << "  " << std::setw(13) << "" << std::right
       << std::setw(12) << total_params() << std::setw(16) << total_macs() << '\n';
    return os.str();
}

std::string CostReport::to_tsv() const {
    std::ostringstream os;
    os << "layer\tkind\tparams\tmacs\n";
    for (const auto& e : entries) os << e.name << '\t' << to_string(e.kind) << '\t' << e.params << '\t' << e.macs << '\n';
    os << "total\t-\t" << total_params() << '\t' << total_macs() << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------

Conv2d::Conv2d(ParamStore& params, std::string n, std::int64_t cin, std::int64_t cout, int k, std::uint64_t seed,
               DType dtype, int stride, int pad)
    : name(std::move(n)), spec(LayerSpec::conv(cin, cout, k, stride, pad)) {
    params.add(name + ".w", kaiming_uniform({cout, cin, k, k}, cin * k * k, derive_seed(seed, name), dtype));
    params.add(name + ".b", Tensor::zeros({cout}, dtype));
}

Tensor Conv2d::operator()(const ParamStore& params, const Tensor& x) const {
    return conv2d(x, params.get(name + ".w"), params.get(name + ".b"), spec.stride, spec.padding);
}

Linear::Linear(ParamStore& params, std::string n, std::int64_t din, std::int64_t dout, std::uint64_t seed, DType dtype)
    : name(std::move(n)), spec(LayerSpec::linear(din, dout)) {
    params.add(name + ".w", kaiming_uniform({din, dout}, din, derive_seed(seed, name), dtype));
    params.add(name + ".b", Tensor::zeros({dout}, dtype));
}

Tensor Linear::operator()(const ParamStore& params, const Tensor& x) const {
    return linear(x, params.get(name + ".w"), params.get(name + ".b"));
}

LayerNorm::LayerNorm(ParamStore& params, std::string n, std::int64_t d, DType dtype)
    : name(std::move(n)), spec(LayerSpec::norm(d)) {
    params.add(name + ".w", Tensor::ones({d}, dtype));
    params.add(name + ".b", Tensor::zeros({d}, dtype));
}

Tensor LayerNorm::operator()(const ParamStore& params, const Tensor& x) const {
    return layer_norm(x, params.get(name + ".w"), params.get(name + ".b"));
}

}  // namespace rdst::nn

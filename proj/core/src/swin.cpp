#include "rdst/swin.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "rdst/detail/dispatch.hpp"
#include "rdst/detail/gemm.hpp"
#include "rdst/ops.hpp"
#include "rdst/tape.hpp"

namespace rdst::swin {

using detail::gemm;
using detail::visit_dtype;

namespace {

std::int64_t mirror(std::int64_t i, std::int64_t n) {
    if (n == 1) return 0;
    const std::int64_t period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

std::int64_t wrap(std::int64_t i, std::int64_t n) { return ((i % n) + n) % n; }

// out row r = x row idx[r]; rows are the trailing axis of width `width`.
Tensor gather_rows(const Tensor& x, std::int64_t width, std::shared_ptr<const std::vector<std::int64_t>> idx,
                   Shape out_shape) {
    Tensor out(std::move(out_shape), x.dtype());
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* src = x.data<T>().data();
        T* dst = out.mutable_data<T>().data();
        for (std::size_t r = 0; r < idx->size(); ++r) std::copy_n(src + (*idx)[r] * width, width, dst + r * width);
    });
    if (any_tracked({x})) {
        record_op(out, {x}, [shape = x.shape(), width, idx](const Tensor& g, GradSlots& slots) {
            Tensor gx(shape, g.dtype());
            visit_dtype(g.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* src = g.data<T>().data();
                T* dst = gx.mutable_data<T>().data();
                for (std::size_t r = 0; r < idx->size(); ++r) {
                    T* d = dst + (*idx)[r] * width;
                    const T* s = src + r * width;
                    for (std::int64_t k = 0; k < width; ++k) d[k] += s[k];
                }
            });
            slots.set(0, gx);
        });
    }
    return out;
}

}  // namespace

WindowGrid WindowGrid::make(std::int64_t h, std::int64_t w, std::int64_t window, std::int64_t shift) {
    if (h < 1 || w < 1) throw ShapeError("window grid over an empty map");
    if (window < 1) throw ShapeError("window size must be positive");
    if (shift < 0 || shift >= window) throw ShapeError("window shift must lie in [0, M)");
    WindowGrid g;
    g.h = h;
    g.w = w;
    g.window = window;
    g.shift_y = g.shift_x = shift;
    g.pad_h = (window - h % window) % window;
    g.pad_w = (window - w % window) % window;
    return g;
}

void StlConfig::validate() const {
    if (dim < 1 || heads < 1) throw ShapeError("STL width and heads must be positive");
    if (dim % heads != 0) {
        throw ShapeError("STL width " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) + " heads");
    }
    if (window < 1) throw ShapeError("STL window must be positive");
    if (mlp_hidden() < 1) throw ShapeError("STL MLP hidden width must be positive");
}

Tensor partition_tokens(const Tensor& x, const WindowGrid& grid) {
    if (x.rank() != 4 || x.dim(1) != grid.h || x.dim(2) != grid.w) {
        throw ShapeError("partition_tokens: map " + to_string(x.shape()) + " does not match grid");
    }
    const std::int64_t n = x.dim(0), c = x.dim(3), m = grid.window;
    const std::int64_t hp = grid.padded_h(), wp = grid.padded_w(), nwx = grid.windows_x(), nw = grid.count();
    auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n * nw * m * m));
    std::size_t r = 0;
    for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t win = 0; win < nw; ++win) {
            const std::int64_t wy = win / nwx, wx = win % nwx;
            for (std::int64_t iy = 0; iy < m; ++iy) {
                const std::int64_t oy = mirror((wy * m + iy + grid.shift_y) % hp, grid.h);
                for (std::int64_t ix = 0; ix < m; ++ix) {
                    const std::int64_t ox = mirror((wx * m + ix + grid.shift_x) % wp, grid.w);
                    (*idx)[r++] = (b * grid.h + oy) * grid.w + ox;
                }
            }
        }
    }
    return gather_rows(x, c, idx, {n * nw, m * m, c});
}

Tensor reverse_tokens(const Tensor& windows, const WindowGrid& grid, std::int64_t n) {
    const std::int64_t m = grid.window, nw = grid.count();
    if (windows.rank() != 3 || windows.dim(0) != n * nw || windows.dim(1) != m * m) {
        throw ShapeError("reverse_tokens: windows " + to_string(windows.shape()) + " do not match grid");
    }
    const std::int64_t c = windows.dim(2);
    const std::int64_t hp = grid.padded_h(), wp = grid.padded_w(), nwx = grid.windows_x();
    auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n * grid.h * grid.w));
    std::size_t r = 0;
    for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t y = 0; y < grid.h; ++y) {
            const std::int64_t py = wrap(y - grid.shift_y, hp);
            for (std::int64_t x = 0; x < grid.w; ++x) {
                const std::int64_t px = wrap(x - grid.shift_x, wp);
                const std::int64_t win = (py / m) * nwx + px / m;
                (*idx)[r++] = (b * nw + win) * m * m + (py % m) * m + px % m;
            }
        }
    }
    return gather_rows(windows, c, idx, {n, grid.h, grid.w, c});
}

Tensor window_partition(const Tensor& x, const WindowGrid& grid) { return partition_tokens(nn::nchw_to_nhwc(x), grid); }

Tensor window_reverse(const Tensor& windows, const WindowGrid& grid, std::int64_t n) {
    return nn::nhwc_to_nchw(reverse_tokens(windows, grid, n));
}

Tensor cyclic_shift(const Tensor& x, std::int64_t sy, std::int64_t sx) {
    if (x.rank() != 4) throw ShapeError("cyclic_shift expects an NCHW map");
    return roll(roll(x, 2, -sy), 3, -sx);
}

std::vector<int> region_labels(const WindowGrid& grid) {
    auto band = [&](std::int64_t p, std::int64_t extent, std::int64_t shift) {
        if (shift == 0 || extent <= grid.window) return 0;
        if (p < extent - grid.window) return 0;
        if (p < extent - shift) return 1;
        return 2;
    };
    const std::int64_t hp = grid.padded_h(), wp = grid.padded_w();
    std::vector<int> labels(static_cast<std::size_t>(hp * wp));
    for (std::int64_t y = 0; y < hp; ++y) {
        for (std::int64_t x = 0; x < wp; ++x) {
            labels[y * wp + x] = band(y, hp, grid.shift_y) * 3 + band(x, wp, grid.shift_x);
        }
    }
    return labels;
}

Tensor attention_mask(const WindowGrid& grid, DType dtype) {
    const std::int64_t m = grid.window, t = m * m, nw = grid.count(), nwx = grid.windows_x(), wp = grid.padded_w();
    const auto labels = region_labels(grid);
    std::vector<double> v(static_cast<std::size_t>(nw * t * t), 0.0);
    for (std::int64_t win = 0; win < nw; ++win) {
        const std::int64_t y0 = (win / nwx) * m, x0 = (win % nwx) * m;
        for (std::int64_t i = 0; i < t; ++i) {
            const int li = labels[(y0 + i / m) * wp + x0 + i % m];
            for (std::int64_t j = 0; j < t; ++j) {
                const int lj = labels[(y0 + j / m) * wp + x0 + j % m];
                if (li != lj) v[(win * t + i) * t + j] = kMaskValue;
            }
        }
    }
    return Tensor::from_values({nw, t, t}, v, dtype);
}

Tensor relative_position_bias(const Tensor& table, std::int64_t window) {
    const std::int64_t m = window, t = m * m, span = 2 * m - 1;
    if (table.rank() != 2 || table.dim(0) != span * span) {
        throw ShapeError("relative position table must be [(2M-1)^2, heads], got " + to_string(table.shape()));
    }
    const std::int64_t heads = table.dim(1);
    auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(t * t));
    for (std::int64_t i = 0; i < t; ++i) {
        for (std::int64_t j = 0; j < t; ++j) {
            const std::int64_t dy = i / m - j / m + m - 1, dx = i % m - j % m + m - 1;
            (*idx)[i * t + j] = dy * span + dx;
        }
    }
    // [T*T, heads] gathered rows, then heads to the front.
    Tensor rows = gather_rows(table, heads, idx, {t, t, heads});
    return permute(rows, {2, 0, 1});
}

Tensor window_attention(const Tensor& qkv, std::int64_t heads, const Tensor& bias, const Tensor& mask, Tensor* probs) {
    if (qkv.rank() != 3 || qkv.dim(2) % 3 != 0) throw ShapeError("window_attention: qkv must be [B, T, 3c]");
    const std::int64_t b_count = qkv.dim(0), t = qkv.dim(1), c = qkv.dim(2) / 3;
    if (heads < 1 || c % heads != 0) {
        throw ShapeError("window_attention: width " + std::to_string(c) + " not divisible by " + std::to_string(heads) +
                         " heads");
    }
    const std::int64_t dh = c / heads;
    if (bias.defined() && bias.shape() != Shape{heads, t, t}) throw ShapeError("window_attention: bias shape mismatch");
    std::int64_t nw = 1;
    if (mask.defined()) {
        if (mask.rank() != 3 || mask.dim(1) != t || mask.dim(2) != t || b_count % mask.dim(0) != 0) {
            throw ShapeError("window_attention: mask shape mismatch");
        }
        nw = mask.dim(0);
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor out({b_count, t, c}, qkv.dtype());
    Tensor p({b_count, heads, t, t}, qkv.dtype());
    visit_dtype(qkv.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pq = qkv.data<T>().data();
        const T* pb = bias.defined() ? bias.data<T>().data() : nullptr;
        const T* pm = mask.defined() ? mask.data<T>().data() : nullptr;
        T* po = out.mutable_data<T>().data();
        T* pp = p.mutable_data<T>().data();
        const std::int64_t ld = 3 * c;
        for (std::int64_t b = 0; b < b_count; ++b) {
            const T* base = pq + b * t * ld;
            const T* mwin = pm ? pm + (b % nw) * t * t : nullptr;
            for (std::int64_t h = 0; h < heads; ++h) {
                T* s = pp + (b * heads + h) * t * t;
                gemm<T>(false, true, t, t, dh, static_cast<T>(scale), base + h * dh, ld, base + c + h * dh, ld, T(0), s, t);
                for (std::int64_t i = 0; i < t; ++i) {
                    T* row = s + i * t;
                    if (pb) {
                        const T* br = pb + (h * t + i) * t;
                        for (std::int64_t j = 0; j < t; ++j) row[j] += br[j];
                    }
                    if (mwin) {
                        const T* mr = mwin + i * t;
                        for (std::int64_t j = 0; j < t; ++j) row[j] += mr[j];
                    }
                    T mx = -std::numeric_limits<T>::infinity();
                    for (std::int64_t j = 0; j < t; ++j) mx = std::max(mx, row[j]);
                    T total = 0;
                    for (std::int64_t j = 0; j < t; ++j) {
                        row[j] = std::exp(row[j] - mx);
                        total += row[j];
                    }
                    const T inv = T(1) / total;
                    for (std::int64_t j = 0; j < t; ++j) row[j] *= inv;
                }
                gemm<T>(false, false, t, dh, t, T(1), s, t, base + 2 * c + h * dh, ld, T(0), po + b * t * c + h * dh, c);
            }
        }
    });
    detail::check_finite(out, "window_attention");
    if (probs) *probs = p.detach();

    std::vector<Tensor> inputs{qkv};
    if (bias.defined()) inputs.push_back(bias);
    if (any_tracked(inputs)) {
        record_op(out, inputs, [qkv, p, heads, b_count, t, c, dh, scale, has_bias = bias.defined()](const Tensor& g,
                                                                                                     GradSlots& slots) {
            visit_dtype(qkv.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* pq = qkv.data<T>().data();
                const T* pp = p.data<T>().data();
                const T* pg = g.data<T>().data();
                Tensor gqkv({b_count, t, 3 * c}, qkv.dtype());
                Tensor gbias;
                const bool want_bias = has_bias && slots.needs(1);
                if (want_bias) gbias = Tensor({heads, t, t}, qkv.dtype());
                T* gq = gqkv.mutable_data<T>().data();
                std::vector<T> ds(static_cast<std::size_t>(t * t));
                const std::int64_t ld = 3 * c;
                for (std::int64_t b = 0; b < b_count; ++b) {
                    const T* base = pq + b * t * ld;
                    T* gbase = gq + b * t * ld;
                    const T* gout = pg + b * t * c;
                    for (std::int64_t h = 0; h < heads; ++h) {
                        const T* ph = pp + (b * heads + h) * t * t;
                        // dP = dO V^T
                        gemm<T>(false, true, t, t, dh, T(1), gout + h * dh, c, base + 2 * c + h * dh, ld, T(0), ds.data(), t);
                        // dV = P^T dO
                        gemm<T>(true, false, t, dh, t, T(1), ph, t, gout + h * dh, c, T(0), gbase + 2 * c + h * dh, ld);
                        // dS = P * (dP - rowsum(dP * P))
                        for (std::int64_t i = 0; i < t; ++i) {
                            T* dr = ds.data() + i * t;
                            const T* pr = ph + i * t;
                            T dot = 0;
                            for (std::int64_t j = 0; j < t; ++j) dot += dr[j] * pr[j];
                            for (std::int64_t j = 0; j < t; ++j) dr[j] = pr[j] * (dr[j] - dot);
                        }
                        if (want_bias) {
                            T* gb = gbias.mutable_data<T>().data() + h * t * t;
                            for (std::int64_t k = 0; k < t * t; ++k) gb[k] += ds[k];
                        }
                        // dQ = scale dS K, dK = scale dS^T Q
                        gemm<T>(false, false, t, dh, t, static_cast<T>(scale), ds.data(), t, base + c + h * dh, ld, T(0),
                                gbase + h * dh, ld);
                        gemm<T>(true, false, t, dh, t, static_cast<T>(scale), ds.data(), t, base + h * dh, ld, T(0),
                                gbase + c + h * dh, ld);
                    }
                }
                if (slots.needs(0)) slots.set(0, gqkv);
                if (want_bias) slots.set(1, gbias);
            });
        });
    }
    return out;
}

// ---------------------------------------------------------------------------

StlLayer::StlLayer(ParamStore& params, std::string name, const StlConfig& cfg, std::int64_t shift, std::uint64_t seed,
                   DType dtype)
    : name_(std::move(name)), cfg_(cfg), shift_(shift) {
    cfg_.validate();
    if (shift < 0 || shift >= cfg.window) throw ShapeError("STL shift must lie in [0, M)");
    const std::int64_t c = cfg.dim;
    ln1_ = nn::LayerNorm(params, name_ + ".ln1", c, dtype);
    qkv_ = nn::Linear(params, name_ + ".qkv", c, 3 * c, seed, dtype);
    proj_ = nn::Linear(params, name_ + ".proj", c, c, seed, dtype);
    if (cfg.rel_pos_bias) {
        const std::int64_t span = 2 * cfg.window - 1;
        params.add(name_ + ".relpos", Tensor::zeros({span * span, cfg.heads}, dtype));
    }
    ln2_ = nn::LayerNorm(params, name_ + ".ln2", c, dtype);
    mlp1_ = nn::Linear(params, name_ + ".mlp1", c, cfg.mlp_hidden(), seed, dtype);
    mlp2_ = nn::Linear(params, name_ + ".mlp2", cfg.mlp_hidden(), c, seed, dtype);
}

Tensor StlLayer::attention_branch(const ParamStore& params, const Tensor& x, Tensor* probs) const {
    if (x.rank() != 4 || x.dim(3) != cfg_.dim) {
        throw ShapeError(name_ + ": expected [N,H,W," + std::to_string(cfg_.dim) + "] tokens, got " + to_string(x.shape()));
    }
    const auto grid = WindowGrid::make(x.dim(1), x.dim(2), cfg_.window, shift_);
    Tensor win = partition_tokens(ln1_(params, x), grid);
    Tensor qkv = qkv_(params, win);
    Tensor bias = cfg_.rel_pos_bias ? relative_position_bias(params.get(name_ + ".relpos"), cfg_.window) : Tensor();
    Tensor mask = shift_ > 0 ? attention_mask(grid, x.dtype()) : Tensor();
    Tensor a = proj_(params, window_attention(qkv, cfg_.heads, bias, mask, probs));
    return reverse_tokens(a, grid, x.dim(0));
}

Tensor StlLayer::forward(const ParamStore& params, const Tensor& x) const {
    Tensor y = add(x, attention_branch(params, x));
    return add(y, mlp2_(params, nn::gelu(mlp1_(params, ln2_(params, y)))));
}

void StlLayer::cost(nn::CostReport& report, const nn::FeatureShape& in) const {
    const auto grid = WindowGrid::make(in.h, in.w, cfg_.window, shift_);
    const nn::FeatureShape padded{in.n, in.c, grid.padded_h(), grid.padded_w()};
    report.add(name_ + ".ln1", ln1_.spec, in);
    report.add(name_ + ".qkv", qkv_.spec, padded);
    report.add(name_ + ".attn",
               nn::LayerSpec::attention(cfg_.dim, cfg_.heads, grid.tokens(),
                                        cfg_.rel_pos_bias ? (2 * cfg_.window - 1) * (2 * cfg_.window - 1) : 0),
               padded);
    report.add(name_ + ".proj", proj_.spec, padded);
    report.add(name_ + ".ln2", ln2_.spec, in);
    const auto hidden = report.add(name_ + ".mlp1", mlp1_.spec, in);
    report.add(name_ + ".gelu", nn::LayerSpec::gelu(cfg_.mlp_hidden()), hidden);
    report.add(name_ + ".mlp2", mlp2_.spec, hidden);
}

StlPair::StlPair(ParamStore& params, const std::string& prefix, int first_index, const StlConfig& cfg,
                 std::uint64_t seed, DType dtype)
    : regular_(params, prefix + "stl." + std::to_string(first_index), cfg, 0, seed, dtype),
      shifted_(params, prefix + "stl." + std::to_string(first_index + 1), cfg, cfg.window / 2, seed, dtype) {}

Tensor StlPair::forward(const ParamStore& params, const Tensor& x) const {
    return shifted_.forward(params, regular_.forward(params, x));
}

Tensor StlPair::forward_nchw(const ParamStore& params, const Tensor& x) const {
    return nn::nhwc_to_nchw(forward(params, nn::nchw_to_nhwc(x)));
}

void StlPair::cost(nn::CostReport& report, const nn::FeatureShape& in) const {
    regular_.cost(report, in);
    shifted_.cost(report, in);
}

}  // namespace rdst::swin

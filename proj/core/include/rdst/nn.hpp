#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rdst/param_store.hpp"
#include "rdst/tensor.hpp"

namespace rdst::nn {

/// Zero-padded cross-correlation. x [N,C,H,W], w [C',C,k,k], b [C'] or
/// undefined. Output extents are floor((H + 2 pad - k) / stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1, int pad = 0);

/// x [..., din] times w [din, dout] plus b [dout] (b may be undefined).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Normalises over the last axis, then scales by gamma and shifts by beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// x * Phi(x) with the exact normal CDF.
Tensor gelu(const Tensor& x);

/// [N, C r^2, H, W] -> [N, C, rH, rW]; output (i r + a, j r + b) of channel c
/// reads input channel c r^2 + a r + b.
Tensor pixel_shuffle(const Tensor& x, int r);
Tensor pixel_unshuffle(const Tensor& x, int r);

/// Nearest-neighbour upsampling of an NCHW map by an integer factor.
Tensor upsample_nearest(const Tensor& x, int factor);

/// [N,C,H,W] <-> [N,H,W,C].
Tensor nchw_to_nhwc(const Tensor& x);
Tensor nhwc_to_nchw(const Tensor& x);

/// Uniform samples in +-sqrt(6 / fan_in), deterministic in `seed`.
Tensor kaiming_uniform(const Shape& shape, std::int64_t fan_in, std::uint64_t seed, DType dtype = DType::kF32);

// ---------------------------------------------------------------------------
// Cost accounting

enum class LayerKind { kConv2d, kLinear, kLayerNorm, kGelu, kPixelShuffle, kPool, kUpsample, kAttention };

std::string to_string(LayerKind kind);

/// Hyperparameters of one layer, enough to derive parameter and MAC counts.
struct LayerSpec {
    LayerKind kind = LayerKind::kConv2d;
    std::int64_t in_channels = 0;
    std::int64_t out_channels = 0;
    int kernel = 1;
    int stride = 1;
    int padding = 0;
    int factor = 1;        // shuffle r, pool or upsample factor
    bool bias = true;
    std::int64_t window_tokens = 0;  // attention: tokens per window
    std::int64_t heads = 1;
    std::int64_t relpos_entries = 0;  // attention: bias table rows per head

    static LayerSpec conv(std::int64_t cin, std::int64_t cout, int k, int stride = 1, int pad = -1, bool bias = true);
    static LayerSpec linear(std::int64_t din, std::int64_t dout, bool bias = true);
    static LayerSpec norm(std::int64_t d);
    static LayerSpec gelu(std::int64_t d);
    static LayerSpec shuffle(std::int64_t cin, int r);
    static LayerSpec upsample(std::int64_t c, int factor);
    static LayerSpec attention(std::int64_t c, std::int64_t heads, std::int64_t window_tokens, std::int64_t relpos_entries);

    std::int64_t params() const;
};

/// Spatial extents after a layer for an [N, C, H, W] (or token) input.
struct FeatureShape {
    std::int64_t n = 1, c = 1, h = 1, w = 1;
};

FeatureShape output_shape(const LayerSpec& spec, const FeatureShape& in);
/// MACs of one forward pass. Biases, norms, activations and softmax count 0.
std::int64_t layer_macs(const LayerSpec& spec, const FeatureShape& in);

struct CostEntry {
    std::string name;
    LayerKind kind;
    std::int64_t params = 0;
    std::int64_t macs = 0;
};

struct CostReport {
    std::vector<CostEntry> entries;

    /// Appends an entry for `spec` applied to `in`; returns the output shape.
    FeatureShape add(const std::string& name, const LayerSpec& spec, const FeatureShape& in);
    void add_raw(const std::string& name, LayerKind kind, std::int64_t params, std::int64_t macs);

    std::int64_t total_params() const;
    std::int64_t total_macs() const;
    /// Sums per name prefix up to the `depth`-th dot, in first-seen order.
    CostReport grouped(int depth) const;

    std::string to_text() const;
    std::string to_tsv() const;
};

// ---------------------------------------------------------------------------
// Parameterised layers. Each holds the names of its tensors in a ParamStore
// and looks them up per call, so reloading a store never leaves stale handles.

struct Conv2d {
    std::string name;
    LayerSpec spec;

    Conv2d() = default;
    Conv2d(ParamStore& params, std::string name, std::int64_t cin, std::int64_t cout, int k, std::uint64_t seed,
           DType dtype, int stride = 1, int pad = -1);
    Tensor operator()(const ParamStore& params, const Tensor& x) const;
};

struct Linear {
    std::string name;
    LayerSpec spec;

    Linear() = default;
    Linear(ParamStore& params, std::string name, std::int64_t din, std::int64_t dout, std::uint64_t seed, DType dtype);
    Tensor operator()(const ParamStore& params, const Tensor& x) const;
};

struct LayerNorm {
    std::string name;
    LayerSpec spec;

    LayerNorm() = default;
    LayerNorm(ParamStore& params, std::string name, std::int64_t d, DType dtype);
    Tensor operator()(const ParamStore& params, const Tensor& x) const;
};

/// Deterministic per-layer seed from a model seed and a layer name.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& name);

}  // namespace rdst::nn

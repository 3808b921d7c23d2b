#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rdst/nn.hpp"
#include "rdst/param_store.hpp"
#include "rdst/tensor.hpp"

namespace rdst::swin {

/// Window layout over an H x W map: reflective padding at the bottom/right up
/// to multiples of M, then a cyclic shift by (sy, sx) on the padded map.
struct WindowGrid {
    std::int64_t h = 0, w = 0;
    std::int64_t window = 8;
    std::int64_t shift_y = 0, shift_x = 0;
    std::int64_t pad_h = 0, pad_w = 0;

    static WindowGrid make(std::int64_t h, std::int64_t w, std::int64_t window, std::int64_t shift = 0);

    std::int64_t padded_h() const { return h + pad_h; }
    std::int64_t padded_w() const { return w + pad_w; }
    std::int64_t windows_y() const { return padded_h() / window; }
    std::int64_t windows_x() const { return padded_w() / window; }
    std::int64_t count() const { return windows_y() * windows_x(); }
    std::int64_t tokens() const { return window * window; }
};

struct StlConfig {
    std::int64_t dim = 60;
    std::int64_t heads = 6;
    double mlp_ratio = 2.0;
    std::int64_t window = 8;
    bool rel_pos_bias = true;

    std::int64_t mlp_hidden() const { return static_cast<std::int64_t>(mlp_ratio * static_cast<double>(dim)); }
    void validate() const;
};

/// [N,H,W,c] -> [N * windows, M^2, c], tokens row-major within each window.
/// Applies the grid's padding and shift.
Tensor partition_tokens(const Tensor& x, const WindowGrid& grid);
/// Inverse of partition_tokens on the unpadded region: [N * windows, M^2, c] -> [N,H,W,c].
Tensor reverse_tokens(const Tensor& windows, const WindowGrid& grid, std::int64_t n);

/// NCHW front ends of the above.
Tensor window_partition(const Tensor& x, const WindowGrid& grid);
Tensor window_reverse(const Tensor& windows, const WindowGrid& grid, std::int64_t n);

/// Torus roll of an NCHW map by (-sy, -sx).
Tensor cyclic_shift(const Tensor& x, std::int64_t sy, std::int64_t sx);

/// Window region label of every padded position, row-major [Hp * Wp]. Each
/// axis has three bands [0, P-M), [P-M, P-s), [P-s, P) in shifted
/// coordinates; an axis covered by a single window is one band, since the
/// window already spans the whole torus along it.
std::vector<int> region_labels(const WindowGrid& grid);

/// [windows, M^2, M^2]: 0 within a region, -100 across regions.
Tensor attention_mask(const WindowGrid& grid, DType dtype = DType::kF32);
constexpr double kMaskValue = -100.0;

/// [heads, M^2, M^2] bias gathered from a [(2M-1)^2, heads] table.
Tensor relative_position_bias(const Tensor& table, std::int64_t window);

/// Fused multi-head attention over windows.
///
/// qkv is [B, T, 3c] with q, k, v stacked along the last axis and heads laid
/// out contiguously inside each. bias is [heads, T, T] or undefined; mask is
/// [nw, T, T] or undefined, applied to window b % nw. Returns the
/// concatenated heads [B, T, c] before the output projection. If `probs` is
/// non-null it receives the post-softmax weights [B, heads, T, T].
Tensor window_attention(const Tensor& qkv, std::int64_t heads, const Tensor& bias, const Tensor& mask,
                        Tensor* probs = nullptr);

/// One shifted-window transformer layer on [N,H,W,c] tokens:
/// x + proj(attn(LN(x))), then + MLP(LN(.)).
class StlLayer {
   public:
    StlLayer() = default;
    StlLayer(ParamStore& params, std::string name, const StlConfig& cfg, std::int64_t shift, std::uint64_t seed,
             DType dtype);

    Tensor forward(const ParamStore& params, const Tensor& x) const;
    /// Only the attention branch, without residual, for tests.
    Tensor attention_branch(const ParamStore& params, const Tensor& x, Tensor* probs = nullptr) const;
    void cost(nn::CostReport& report, const nn::FeatureShape& in) const;

    const std::string& name() const { return name_; }
    std::int64_t shift() const { return shift_; }
    const StlConfig& config() const { return cfg_; }

   private:
    std::string name_;
    StlConfig cfg_;
    std::int64_t shift_ = 0;
    nn::LayerNorm ln1_, ln2_;
    nn::Linear qkv_, proj_, mlp1_, mlp2_;
};

/// Regular-window layer followed by a shifted-window layer (shift floor(M/2)).
class StlPair {
   public:
    StlPair() = default;
    /// Layers are named `<prefix>stl.<first_index>` and `<prefix>stl.<first_index + 1>`.
    StlPair(ParamStore& params, const std::string& prefix, int first_index, const StlConfig& cfg, std::uint64_t seed,
            DType dtype);

    /// [N,H,W,c] -> [N,H,W,c].
    Tensor forward(const ParamStore& params, const Tensor& x) const;
    /// [N,c,H,W] -> [N,c,H,W].
    Tensor forward_nchw(const ParamStore& params, const Tensor& x) const;
    void cost(nn::CostReport& report, const nn::FeatureShape& in) const;

    const StlLayer& regular() const { return regular_; }
    const StlLayer& shifted() const { return shifted_; }

   private:
    StlLayer regular_, shifted_;
};

}  // namespace rdst::swin

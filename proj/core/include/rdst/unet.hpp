#pragma once

#include <map>
#include <string>
#include <vector>

#include "rdst/config.hpp"
#include "rdst/nn.hpp"
#include "rdst/param_store.hpp"

namespace rdst {

/// Encoder widths are base * 2^(level-1); the decoder mirrors them.
struct UNetConfig {
    std::int64_t in_channels = 1;
    int classes = 4;  // 1 means a single sigmoid channel
    std::int64_t base = 64;
    int levels = 5;
    int blocks = 2;  // residual basic blocks per encoder level

    void validate() const;
    std::int64_t width(int level) const { return base << (level - 1); }  // level is 1-based
    /// Spatial extents must be multiples of this.
    std::int64_t divisor() const { return std::int64_t{1} << (levels - 1); }

    std::map<std::string, std::string> to_meta() const;
    static UNetConfig from_meta(const std::map<std::string, std::string>& meta);
    static UNetConfig from_config(const Config& cfg);
};

/// Everything one forward pass exposes. encoder[i] is E_{i+1}.
struct UNetTaps {
    std::vector<Tensor> encoder;
    Tensor decoder;  // last decoder features, full resolution
    Tensor logits;   // [N, K, H, W]
    Tensor probs;    // softmax over K, or sigmoid when K = 1
};

/// Residual-encoder U-Net.
///
/// Tensor names: enc.<l>.stem (level 1), enc.<l>.block.<b>.{conv1,conv2,proj},
/// dec.<l>.{conv1,conv2}, head.
class UNet {
   public:
    UNet(const UNetConfig& cfg, std::uint64_t seed, DType dtype = DType::kF32);

    UNetTaps forward(const Tensor& x) const;
    /// Argmax labels [N, H, W] (threshold 0.5 when K = 1), no recording.
    Tensor predict(const Tensor& x) const;

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    /// Frozen parameters stay off the tape; gradients still reach the input.
    void set_trainable(bool trainable);
    nn::CostReport cost(const nn::FeatureShape& input) const;
    const UNetConfig& config() const { return cfg_; }

   private:
    struct Block {
        nn::Conv2d conv1, conv2, proj;
        bool has_proj = false;
    };
    struct Level {
        nn::Conv2d stem;
        std::vector<Block> blocks;
        nn::Conv2d dec1, dec2;
    };

    Tensor block_forward(const Block& b, const Tensor& x) const;

    UNetConfig cfg_;
    ParamStore params_;
    std::vector<Level> levels_;
    nn::Conv2d head_;
};

/// [N, H, W] class indices -> [N, K, H, W] indicator maps. For K = 1 the
/// single channel marks nonzero labels.
Tensor one_hot(const Tensor& labels, int classes);

/// 2|X∩Y| + eps over |X| + |Y| + eps for binary masks of equal shape.
double dice_coefficient(const Tensor& x, const Tensor& y, double eps = 1.0);

/// Soft dice per class over batch and pixels, (2 Σ p t + eps) / (Σ p + Σ t + eps);
/// returns 1 - the class mean. probs and target are [N, K, H, W].
Tensor dice_loss(const Tensor& probs, const Tensor& target, double eps = 1.0);

}  // namespace rdst

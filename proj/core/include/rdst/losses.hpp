#pragma once

#include <string>

#include "rdst/tensor.hpp"
#include "rdst/unet.hpp"

namespace rdst {

enum class PerceptualKind { kNone, kEncoder, kSumEncoder, kDecoder, kHrl };

/// alpha * L1 + lambda * L_U for one perceptual variant.
struct LossSpec {
    double alpha = 1.0;
    double lambda = 10.0;
    PerceptualKind kind = PerceptualKind::kNone;
    int tap = 1;  // encoder level for kEncoder, 1..5

    /// "none", "E1".."E5", "sumE", "D" or "HRL".
    static LossSpec parse(const std::string& variant, double alpha = 1.0, double lambda = 10.0);
    std::string variant() const;
    bool needs_unet() const { return kind != PerceptualKind::kNone; }
    /// Throws ConfigError when the weights or the U-Net presence are inconsistent.
    void validate(bool have_unet) const;
};

/// Mean absolute difference over every element.
Tensor l1_loss(const Tensor& sr, const Tensor& hr);

/// L1 between encoder taps E_i of the two passes (i is 1-based). The U-Net is
/// expected frozen; gradients reach `sr` only.
Tensor perceptual_encoder(int i, const Tensor& sr, const Tensor& hr, const UNet& unet);
/// Sum of perceptual_encoder over every level, from one pass per input.
Tensor perceptual_sum_encoder(const Tensor& sr, const Tensor& hr, const UNet& unet);
/// L1 between the last decoder features.
Tensor perceptual_decoder(const Tensor& sr, const Tensor& hr, const UNet& unet);
/// 1 - soft dice between the predicted probability maps, with squared
/// denominators so identical maps score exactly 0. In [0, 1].
Tensor perceptual_hrl(const Tensor& sr, const Tensor& hr, const UNet& unet);

/// Soft dice similarity (2 Σ p q + eps) / (Σ p² + Σ q² + eps), class mean.
Tensor soft_dice_similarity(const Tensor& p, const Tensor& q, double eps = 1.0);

struct LossTerms {
    Tensor total;
    Tensor l1;
    Tensor perceptual;  // undefined for kNone
};

/// alpha * L1 + lambda * L_U. `unet` may be null only for kNone.
LossTerms combined_loss(const LossSpec& spec, const Tensor& sr, const Tensor& hr, const UNet* unet);

}  // namespace rdst

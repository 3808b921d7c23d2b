#include "rdst/losses.hpp"

#include "rdst/config.hpp"
#include "rdst/ops.hpp"
#include "rdst/tape.hpp"

namespace rdst {

LossSpec LossSpec::parse(const std::string& variant, double alpha, double lambda) {
    LossSpec s;
    s.alpha = alpha;
    s.lambda = lambda;
    if (variant == "none") {
        s.kind = PerceptualKind::kNone;
    } else if (variant == "sumE") {
        s.kind = PerceptualKind::kSumEncoder;
    } else if (variant == "D") {
        s.kind = PerceptualKind::kDecoder;
    } else if (variant == "HRL") {
        s.kind = PerceptualKind::kHrl;
    } else if (variant.size() == 2 && variant[0] == 'E' && variant[1] >= '1' && variant[1] <= '9') {
        s.kind = PerceptualKind::kEncoder;
        s.tap = variant[1] - '0';
    } else {
        throw ConfigError("unknown loss variant '" + variant + "' (none, E1..E5, sumE, D, HRL)");
    }
    return s;
}

std::string LossSpec::variant() const {
    switch (kind) {
        case PerceptualKind::kNone: return "none";
        case PerceptualKind::kEncoder: return "E" + std::to_string(tap);
        case PerceptualKind::kSumEncoder: return "sumE";
        case PerceptualKind::kDecoder: return "D";
        case PerceptualKind::kHrl: return "HRL";
    }
    return "?";
}

void LossSpec::validate(bool have_unet) const {
    if (alpha < 0 || lambda < 0) throw ConfigError("loss weights must be non-negative");
    if (alpha == 0 && lambda == 0) throw ConfigError("loss.alpha and loss.lambda cannot both be zero");
    if (needs_unet() && !have_unet) throw ConfigError("loss variant " + variant() + " needs a U-Net checkpoint");
    if (!needs_unet() && have_unet) throw ConfigError("loss variant none takes no U-Net");
}

Tensor l1_loss(const Tensor& sr, const Tensor& hr) {
    if (sr.shape() != hr.shape()) {
        throw ShapeError("l1_loss: " + to_string(sr.shape()) + " vs " + to_string(hr.shape()));
    }
    return mean(abs(sub(sr, hr)));
}

namespace {

UNetTaps reference_taps(const Tensor& hr, const UNet& unet) {
    NoGradGuard no_grad;
    return unet.forward(hr);
}

void check_pair(const Tensor& sr, const Tensor& hr) {
    if (sr.shape() != hr.shape()) {
        throw ShapeError("perceptual loss: " + to_string(sr.shape()) + " vs " + to_string(hr.shape()));
    }
}

}  // namespace

Tensor perceptual_encoder(int i, const Tensor& sr, const Tensor& hr, const UNet& unet) {
    check_pair(sr, hr);
    if (i < 1 || i > unet.config().levels) {
        throw ConfigError("encoder tap E" + std::to_string(i) + " outside 1.." + std::to_string(unet.config().levels));
    }
    const auto ref = reference_taps(hr, unet);
    return l1_loss(unet.forward(sr).encoder[i - 1], ref.encoder[i - 1]);
}

Tensor perceptual_sum_encoder(const Tensor& sr, const Tensor& hr, const UNet& unet) {
    check_pair(sr, hr);
    const auto ref = reference_taps(hr, unet);
    const auto taps = unet.forward(sr);
    Tensor total = l1_loss(taps.encoder[0], ref.encoder[0]);
    for (std::size_t l = 1; l < taps.encoder.size(); ++l) total = add(total, l1_loss(taps.encoder[l], ref.encoder[l]));
    return total;
}

Tensor perceptual_decoder(const Tensor& sr, const Tensor& hr, const UNet& unet) {
    check_pair(sr, hr);
    const auto ref = reference_taps(hr, unet);
    return l1_loss(unet.forward(sr).decoder, ref.decoder);
}

Tensor soft_dice_similarity(const Tensor& p, const Tensor& q, double eps) {
    if (p.rank() != 4 || p.shape() != q.shape()) throw ShapeError("soft dice: maps must share an [N,K,H,W] shape");
    const std::int64_t k = p.dim(1);
    auto per_class = [k](const Tensor& t) { return sum(reshape(permute(t, {1, 0, 2, 3}), {k, t.numel() / k}), 1); };
    Tensor num = add(mul(per_class(mul(p, q)), 2.0), eps);
    Tensor den = add(add(per_class(square(p)), per_class(square(q))), eps);
    return mean(div(num, den));
}

Tensor perceptual_hrl(const Tensor& sr, const Tensor& hr, const UNet& unet) {
    check_pair(sr, hr);
    const auto ref = reference_taps(hr, unet);
    Tensor sim = soft_dice_similarity(unet.forward(sr).probs, ref.probs);
    return sub(Tensor::scalar(1.0, sim.dtype()), sim);
}

LossTerms combined_loss(const LossSpec& spec, const Tensor& sr, const Tensor& hr, const UNet* unet) {
    spec.validate(unet != nullptr);
    LossTerms t;
    t.l1 = l1_loss(sr, hr);
    t.total = mul(t.l1, spec.alpha);
    if (!spec.needs_unet()) return t;
    switch (spec.kind) {
        case PerceptualKind::kEncoder: t.perceptual = perceptual_encoder(spec.tap, sr, hr, *unet); break;
        case PerceptualKind::kSumEncoder: t.perceptual = perceptual_sum_encoder(sr, hr, *unet); break;
        case PerceptualKind::kDecoder: t.perceptual = perceptual_decoder(sr, hr, *unet); break;
        case PerceptualKind::kHrl: t.perceptual = perceptual_hrl(sr, hr, *unet); break;
        case PerceptualKind::kNone: break;
    }
    t.total = add(t.total, mul(t.perceptual, spec.lambda));
    return t;
}

}  // namespace rdst

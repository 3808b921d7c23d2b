#include "rdst/unet.hpp"

#include <cmath>

#include "rdst/ops.hpp"
#include "rdst/tape.hpp"

namespace rdst {

void UNetConfig::validate() const {
    if (in_channels < 1 || base < 1) throw ConfigError("U-Net widths must be positive");
    if (classes < 1) throw ConfigError("unet.classes must be positive");
    if (levels < 1 || levels > 8) throw ConfigError("unet.levels must lie in 1..8");
    if (blocks < 1) throw ConfigError("unet.blocks must be positive");
}

std::map<std::string, std::string> UNetConfig::to_meta() const {
    return {{"unet.channels", std::to_string(in_channels)},
            {"unet.classes", std::to_string(classes)},
            {"unet.base", std::to_string(base)},
            {"unet.levels", std::to_string(levels)},
            {"unet.blocks", std::to_string(blocks)}};
}

UNetConfig UNetConfig::from_meta(const std::map<std::string, std::string>& meta) {
    Config c;
    for (const auto& [k, v] : meta) {
        if (k.rfind("unet.", 0) == 0) c.set(k, v);
    }
    for (const char* key : {"unet.channels", "unet.classes", "unet.base", "unet.levels", "unet.blocks"}) {
        if (!c.has(key)) throw ConfigError(std::string("U-Net manifest lacks ") + key);
    }
    UNetConfig u;
    u.in_channels = c.integer("unet.channels");
    u.classes = static_cast<int>(c.integer("unet.classes"));
    u.base = c.integer("unet.base");
    u.levels = static_cast<int>(c.integer("unet.levels"));
    u.blocks = static_cast<int>(c.integer("unet.blocks"));
    u.validate();
    return u;
}

UNetConfig UNetConfig::from_config(const Config& cfg) {
    Config merged = Config::defaults();
    merged.merge(cfg);
    return from_meta(merged.with_prefix("unet."));
}

UNet::UNet(const UNetConfig& cfg, std::uint64_t seed, DType dtype) : cfg_(cfg) {
    cfg_.validate();
    for (int l = 1; l <= cfg_.levels; ++l) {
        Level lv;
        const std::string p = "enc." + std::to_string(l);
        const std::int64_t w = cfg_.width(l);
        if (l == 1) lv.stem = nn::Conv2d(params_, p + ".stem", cfg_.in_channels, w, 3, seed, dtype);
        for (int b = 0; b < cfg_.blocks; ++b) {
            Block blk;
            const std::string bp = p + ".block." + std::to_string(b);
            const bool down = l > 1 && b == 0;
            const std::int64_t cin = down ? cfg_.width(l - 1) : w;
            blk.conv1 = nn::Conv2d(params_, bp + ".conv1", cin, w, 3, seed, dtype, down ? 2 : 1, 1);
            blk.conv2 = nn::Conv2d(params_, bp + ".conv2", w, w, 3, seed, dtype);
            if (down) {
                blk.proj = nn::Conv2d(params_, bp + ".proj", cin, w, 1, seed, dtype, 2, 0);
                blk.has_proj = true;
            }
            lv.blocks.push_back(std::move(blk));
        }
        if (l < cfg_.levels) {
            const std::string dp = "dec." + std::to_string(l);
            lv.dec1 = nn::Conv2d(params_, dp + ".conv1", cfg_.width(l + 1) + w, w, 3, seed, dtype);
            lv.dec2 = nn::Conv2d(params_, dp + ".conv2", w, w, 3, seed, dtype);
        }
        levels_.push_back(std::move(lv));
    }
    head_ = nn::Conv2d(params_, "head", cfg_.width(1), cfg_.classes, 1, seed, dtype);
}

void UNet::set_trainable(bool trainable) {
    for (auto& [name, t] : params_.entries()) t.set_requires_grad(trainable);
}

Tensor UNet::block_forward(const Block& b, const Tensor& x) const {
    Tensor h = relu(b.conv1(params_, x));
    h = b.conv2(params_, h);
    return relu(add(h, b.has_proj ? b.proj(params_, x) : x));
}

UNetTaps UNet::forward(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != cfg_.in_channels) {
        throw ShapeError("U-Net expects [N," + std::to_string(cfg_.in_channels) + ",H,W], got " + to_string(x.shape()));
    }
    const std::int64_t div = cfg_.divisor();
    if (x.dim(2) % div != 0 || x.dim(3) % div != 0) {
        throw ShapeError("U-Net input extents " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                         " are not multiples of " + std::to_string(div));
    }
    UNetTaps taps;
    Tensor h = relu(levels_[0].stem(params_, x));
    for (int l = 0; l < cfg_.levels; ++l) {
        for (const auto& b : levels_[l].blocks) h = block_forward(b, h);
        taps.encoder.push_back(h);
    }
    for (int l = cfg_.levels - 2; l >= 0; --l) {
        Tensor up = nn::upsample_nearest(h, 2);
        h = relu(levels_[l].dec1(params_, concat({up, taps.encoder[l]}, 1)));
        h = relu(levels_[l].dec2(params_, h));
    }
    taps.decoder = h;
    taps.logits = head_(params_, h);
    taps.probs = cfg_.classes == 1 ? sigmoid(taps.logits) : softmax(taps.logits, 1);
    return taps;
}

Tensor UNet::predict(const Tensor& x) const {
    NoGradGuard no_grad;
    const Tensor p = forward(x).probs;
    const std::int64_t n = p.dim(0), k = p.dim(1), hw = p.dim(2) * p.dim(3);
    const auto v = p.to_vector();
    std::vector<double> out(static_cast<std::size_t>(n * hw));
    for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t i = 0; i < hw; ++i) {
            if (k == 1) {
                out[b * hw + i] = v[b * hw + i] > 0.5 ? 1.0 : 0.0;
                continue;
            }
            std::int64_t best = 0;
            for (std::int64_t c = 1; c < k; ++c) {
                if (v[(b * k + c) * hw + i] > v[(b * k + best) * hw + i]) best = c;
            }
            out[b * hw + i] = static_cast<double>(best);
        }
    }
    return Tensor::from_values({n, p.dim(2), p.dim(3)}, out, DType::kF32);
}

nn::CostReport UNet::cost(const nn::FeatureShape& input) const {
    nn::CostReport r;
    nn::FeatureShape f = r.add(levels_[0].stem.name, levels_[0].stem.spec, input);
    std::vector<nn::FeatureShape> skips;
    for (const auto& lv : levels_) {
        for (const auto& b : lv.blocks) {
            const nn::FeatureShape in = f;
            f = r.add(b.conv1.name, b.conv1.spec, in);
            f = r.add(b.conv2.name, b.conv2.spec, f);
            if (b.has_proj) r.add(b.proj.name, b.proj.spec, in);
        }
        skips.push_back(f);
    }
    for (int l = cfg_.levels - 2; l >= 0; --l) {
        f = r.add("dec." + std::to_string(l + 1) + ".upsample", nn::LayerSpec::upsample(f.c, 2), f);
        f.c += skips[l].c;
        f = r.add(levels_[l].dec1.name, levels_[l].dec1.spec, f);
        f = r.add(levels_[l].dec2.name, levels_[l].dec2.spec, f);
    }
    r.add("head", head_.spec, f);
    return r;
}

Tensor one_hot(const Tensor& labels, int classes) {
    if (labels.rank() != 3) throw ShapeError("one_hot expects [N,H,W] labels, got " + to_string(labels.shape()));
    const std::int64_t n = labels.dim(0), hw = labels.dim(1) * labels.dim(2);
    const auto v = labels.to_vector();
    std::vector<double> out(static_cast<std::size_t>(n * classes * hw), 0.0);
    for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t i = 0; i < hw; ++i) {
            const auto c = static_cast<std::int64_t>(std::llround(v[b * hw + i]));
            if (classes == 1) {
                out[b * hw + i] = c != 0 ? 1.0 : 0.0;
                continue;
            }
            if (c < 0 || c >= classes) {
                throw ShapeError("label " + std::to_string(c) + " outside " + std::to_string(classes) + " classes");
            }
            out[(b * classes + c) * hw + i] = 1.0;
        }
    }
    return Tensor::from_values({n, classes, labels.dim(1), labels.dim(2)}, out, labels.dtype());
}

double dice_coefficient(const Tensor& x, const Tensor& y, double eps) {
    if (x.shape() != y.shape()) {
        throw ShapeError("dice: mask shapes " + to_string(x.shape()) + " and " + to_string(y.shape()) + " differ");
    }
    const auto a = x.to_vector(), b = y.to_vector();
    double inter = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool pa = a[i] != 0.0, pb = b[i] != 0.0;
        inter += pa && pb;
        sa += pa;
        sb += pb;
    }
    return (2.0 * inter + eps) / (sa + sb + eps);
}

Tensor dice_loss(const Tensor& probs, const Tensor& target, double eps) {
    if (probs.rank() != 4 || probs.shape() != target.shape()) {
        throw ShapeError("dice_loss: probs " + to_string(probs.shape()) + " and target " + to_string(target.shape()) +
                         " must both be [N,K,H,W]");
    }
    // Per-class sums over batch and pixels: move K to the front, flatten the rest.
    const std::int64_t k = probs.dim(1);
    auto per_class = [k](const Tensor& t) { return sum(reshape(permute(t, {1, 0, 2, 3}), {k, t.numel() / k}), 1); };
    Tensor inter = per_class(mul(probs, target));
    Tensor denom = add(add(per_class(probs), per_class(target)), eps);
    Tensor dice = div(add(mul(inter, 2.0), eps), denom);
    return sub(Tensor::scalar(1.0, probs.dtype()), mean(dice));
}

}  // namespace rdst

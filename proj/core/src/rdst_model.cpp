#include "rdst/rdst_model.hpp"

#include <sstream>

#include "rdst/data.hpp"
#include "rdst/ops.hpp"
#include "rdst/tape.hpp"

namespace rdst {

RdstConfig RdstConfig::rdst() { return RdstConfig{}; }

RdstConfig RdstConfig::rdst_e() {
    RdstConfig c;
    c.n_rdstb = 4;
    return c;
}

RdstConfig RdstConfig::tiny() {
    RdstConfig c;
    c.d = 24;
    c.g = 12;
    c.n_rdstb = 2;
    return c;
}

std::string to_string(UpsamplerStyle style) {
    switch (style) {
        case UpsamplerStyle::kProgressive: return "progressive";
        case UpsamplerStyle::kSingle: return "single";
        case UpsamplerStyle::kDirect: return "direct";
    }
    return "?";
}

UpsamplerStyle parse_upsampler(const std::string& text) {
    if (text == "progressive") return UpsamplerStyle::kProgressive;
    if (text == "single") return UpsamplerStyle::kSingle;
    if (text == "direct") return UpsamplerStyle::kDirect;
    throw ConfigError("unknown upsampler style '" + text + "'");
}

std::vector<int> RdstConfig::shuffle_factors() const {
    if (upsampler != UpsamplerStyle::kProgressive) return {scale};
    std::vector<int> f;
    int s = scale;
    while (s % 2 == 0 && s > 1) {
        f.push_back(2);
        s /= 2;
    }
    if (s > 1) f.push_back(s);
    if (f.empty()) f.push_back(1);
    return f;
}

void RdstConfig::validate() const {
    if (scale < 1 || scale > 8) throw ConfigError("model.scale must lie in 1..8");
    if (channels < 1 || d < 1 || g < 1 || window < 1 || heads < 1) throw ConfigError("model widths must be positive");
    if (stl_per_dstb < 2 || stl_per_dstb % 2 != 0) throw ConfigError("model.stl_per_dstb must be a positive even count");
    if (dstb_per_rdstb < 1 || n_rdstb < 1) throw ConfigError("block counts must be positive");
    if (mlp_ratio <= 0) throw ConfigError("model.mlp_ratio must be positive");
    if (!(branch_init > 0)) throw ConfigError("model.branch_init must be positive");
    for (int j = 0; j < dstb_per_rdstb; ++j) {
        if (dstb_width(j) % heads != 0) {
            throw ShapeError("STL width " + std::to_string(dstb_width(j)) + " is not divisible by " +
                             std::to_string(heads) + " heads");
        }
    }
}

std::map<std::string, std::string> RdstConfig::to_meta() const {
    auto num = [](double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    };
    return {
        {"model.scale", std::to_string(scale)},
        {"model.channels", std::to_string(channels)},
        {"model.d", std::to_string(d)},
        {"model.g", std::to_string(g)},
        {"model.window", std::to_string(window)},
        {"model.heads", std::to_string(heads)},
        {"model.mlp_ratio", num(mlp_ratio)},
        {"model.stl_per_dstb", std::to_string(stl_per_dstb)},
        {"model.dstb_per_rdstb", std::to_string(dstb_per_rdstb)},
        {"model.n_rdstb", std::to_string(n_rdstb)},
        {"model.gff", use_gff ? "true" : "false"},
        {"model.relpos", rel_pos_bias ? "true" : "false"},
        {"model.upsampler", to_string(upsampler)},
        {"model.branch_init", num(branch_init)},
    };
}

RdstConfig RdstConfig::from_meta(const std::map<std::string, std::string>& meta) {
    Config c;
    for (const auto& [k, v] : meta) {
        if (k.rfind("model.", 0) == 0) c.set(k, v);
    }
    RdstConfig out;
    auto get = [&](const char* key, auto& field) {
        if (!c.has(key)) throw ConfigError(std::string("checkpoint manifest lacks ") + key);
        using F = std::decay_t<decltype(field)>;
        if constexpr (std::is_same_v<F, bool>) {
            field = c.boolean(key);
        } else if constexpr (std::is_floating_point_v<F>) {
            field = c.real(key);
        } else {
            field = static_cast<F>(c.integer(key));
        }
    };
    get("model.scale", out.scale);
    get("model.channels", out.channels);
    get("model.d", out.d);
    get("model.g", out.g);
    get("model.window", out.window);
    get("model.heads", out.heads);
    get("model.mlp_ratio", out.mlp_ratio);
    get("model.stl_per_dstb", out.stl_per_dstb);
    get("model.dstb_per_rdstb", out.dstb_per_rdstb);
    get("model.n_rdstb", out.n_rdstb);
    get("model.gff", out.use_gff);
    get("model.relpos", out.rel_pos_bias);
    out.upsampler = parse_upsampler(c.str("model.upsampler"));
    get("model.branch_init", out.branch_init);
    out.validate();
    return out;
}

RdstConfig RdstConfig::from_config(const Config& cfg) {
    const std::string preset = cfg.has("model.preset") ? cfg.str("model.preset") : "rdst";
    RdstConfig base;
    if (preset == "rdst") {
        base = rdst();
    } else if (preset == "rdst-e") {
        base = rdst_e();
    } else if (preset == "tiny") {
        base = tiny();
    } else {
        throw ConfigError("unknown model.preset '" + preset + "'");
    }
    // Explicit keys override the preset only when they differ from the
    // global defaults, so a preset is not clobbered by untouched defaults.
    const Config defaults = Config::defaults();
    auto meta = base.to_meta();
    for (auto& [k, v] : meta) {
        if (cfg.has(k) && cfg.str(k) != defaults.str(k)) v = cfg.str(k);
    }
    return from_meta(meta);
}

Tensor SrModel::infer(const Tensor& lr) const {
    NoGradGuard no_grad;
    return clamp(forward(lr), 0.0, 1.0);
}

RdstModel::RdstModel(const RdstConfig& cfg, std::uint64_t seed, DType dtype) : cfg_(cfg), dtype_(dtype) {
    cfg_.validate();
    const std::int64_t d = cfg_.d, g = cfg_.g;
    head_ = nn::Conv2d(params_, "head", cfg_.channels, d, 3, seed, dtype);
    for (int i = 0; i < cfg_.n_rdstb; ++i) {
        Rdstb block;
        const std::string bname = "body." + std::to_string(i);
        for (int j = 0; j < cfg_.dstb_per_rdstb; ++j) {
            Dstb dstb;
            const std::string dname = bname + ".dstb." + std::to_string(j);
            swin::StlConfig sc;
            sc.dim = cfg_.dstb_width(j);
            sc.heads = cfg_.heads;
            sc.mlp_ratio = cfg_.mlp_ratio;
            sc.window = cfg_.window;
            sc.rel_pos_bias = cfg_.rel_pos_bias;
            for (int p = 0; p < cfg_.stl_per_dstb / 2; ++p) {
                dstb.pairs.emplace_back(params_, dname + ".", 2 * p, sc, seed, dtype);
            }
            dstb.bottleneck = nn::Linear(params_, dname + ".bottleneck", sc.dim, g, seed, dtype);
            block.dstbs.push_back(std::move(dstb));
        }
        block.lff = nn::Conv2d(params_, bname + ".lff", cfg_.dstb_width(cfg_.dstb_per_rdstb), d, 3, seed, dtype);
        body_.push_back(std::move(block));
    }
    if (cfg_.use_gff) gff_ = nn::Conv2d(params_, "gff", cfg_.n_rdstb * d, d, 1, seed, dtype);
    body_conv_ = nn::Conv2d(params_, "body_conv", d, d, 3, seed, dtype);

    factors_ = cfg_.shuffle_factors();
    if (cfg_.upsampler == UpsamplerStyle::kDirect) {
        const int s = cfg_.scale;
        upsampler_.emplace_back(params_, "upsampler.0", d, cfg_.channels * s * s, 3, seed, dtype);
        has_tail_ = false;
    } else {
        for (std::size_t k = 0; k < factors_.size(); ++k) {
            const int r = factors_[k];
            upsampler_.emplace_back(params_, "upsampler." + std::to_string(k), d, d * r * r, 3, seed, dtype);
        }
        tail_ = nn::Conv2d(params_, "tail", d, cfg_.channels, 3, seed, dtype);
    }
    if (cfg_.branch_init != 1.0) {
        const std::string out_layer = has_tail_ ? "tail.w" : "upsampler.0.w";
        for (auto& [name, t] : params_.entries()) {
            const bool closes_branch = name.ends_with(".proj.w") || name.ends_with(".mlp2.w") ||
                                       name.ends_with(".bottleneck.w") || name.ends_with(".lff.w") || name == out_layer;
            if (closes_branch) t = mul(t, cfg_.branch_init).detach();
        }
        for (auto& [name, t] : params_.entries()) t.set_requires_grad(true);
    }
}

Tensor RdstModel::dstb_tokens(int i, int j, const Tensor& tokens) const {
    const Dstb& dstb = body_.at(i).dstbs.at(j);
    Tensor s = tokens;
    for (const auto& pair : dstb.pairs) s = pair.forward(params_, s);
    return concat({tokens, dstb.bottleneck(params_, s)}, 3);
}

Tensor RdstModel::dstb_forward(int i, int j, const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != cfg_.dstb_width(j)) {
        throw ShapeError("DSTB " + std::to_string(j) + " expects width " + std::to_string(cfg_.dstb_width(j)) + ", got " +
                         to_string(x.shape()));
    }
    return nn::nhwc_to_nchw(dstb_tokens(i, j, nn::nchw_to_nhwc(x)));
}

Tensor RdstModel::rdstb_forward(int i, const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != cfg_.d) {
        throw ShapeError("RDSTB expects width " + std::to_string(cfg_.d) + ", got " + to_string(x.shape()));
    }
    Tensor t = nn::nchw_to_nhwc(x);
    for (int j = 0; j < cfg_.dstb_per_rdstb; ++j) t = dstb_tokens(i, j, t);
    return add(x, body_.at(i).lff(params_, nn::nhwc_to_nchw(t)));
}

Tensor RdstModel::gff_forward(const std::vector<Tensor>& block_outputs) const {
    if (!cfg_.use_gff) throw std::logic_error("global feature fusion is disabled in this configuration");
    return gff_(params_, concat(block_outputs, 1));
}

Tensor RdstModel::body_forward(const Tensor& features) const {
    Tensor h = features;
    std::vector<Tensor> outs;
    for (int i = 0; i < cfg_.n_rdstb; ++i) {
        h = rdstb_forward(i, h);
        if (cfg_.use_gff) outs.push_back(h);
    }
    if (cfg_.use_gff) h = gff_forward(outs);
    return body_conv_(params_, h);
}

Tensor RdstModel::forward(const Tensor& lr) const {
    if (lr.rank() != 4 || lr.dim(1) != cfg_.channels) {
        throw ShapeError("RDST expects [N," + std::to_string(cfg_.channels) + ",H,W], got " + to_string(lr.shape()));
    }
    Tensor f_lr = head_(params_, lr);
    Tensor f_d = add(f_lr, body_forward(f_lr));
    Tensor u = f_d;
    for (std::size_t k = 0; k < upsampler_.size(); ++k) {
        const int r = cfg_.upsampler == UpsamplerStyle::kDirect ? cfg_.scale : factors_[k];
        u = nn::pixel_shuffle(upsampler_[k](params_, u), r);
    }
    return has_tail_ ? tail_(params_, u) : u;
}

nn::CostReport RdstModel::cost(const nn::FeatureShape& input) const {
    nn::CostReport r;
    nn::FeatureShape f = r.add("head", head_.spec, input);
    for (int i = 0; i < cfg_.n_rdstb; ++i) {
        nn::FeatureShape t = f;
        for (int j = 0; j < cfg_.dstb_per_rdstb; ++j) {
            const auto& dstb = body_[i].dstbs[j];
            for (const auto& pair : dstb.pairs) pair.cost(r, t);
            r.add(dstb.bottleneck.name, dstb.bottleneck.spec, t);
            t.c += cfg_.g;
        }
        r.add(body_[i].lff.name, body_[i].lff.spec, t);
    }
    if (cfg_.use_gff) {
        nn::FeatureShape cat = f;
        cat.c = cfg_.n_rdstb * cfg_.d;
        r.add("gff", gff_.spec, cat);
    }
    f = r.add("body_conv", body_conv_.spec, f);
    for (std::size_t k = 0; k < upsampler_.size(); ++k) {
        f = r.add(upsampler_[k].name, upsampler_[k].spec, f);
        const int fac = cfg_.upsampler == UpsamplerStyle::kDirect ? cfg_.scale : factors_[k];
        f = r.add(upsampler_[k].name + ".shuffle", nn::LayerSpec::shuffle(f.c, fac), f);
    }
    if (has_tail_) r.add("tail", tail_.spec, f);
    return r;
}

Tensor BicubicModel::forward(const Tensor& lr) const { return data::bicubic_upsample(lr, scale_); }

}  // namespace rdst

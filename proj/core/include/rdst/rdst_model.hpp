#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rdst/config.hpp"
#include "rdst/nn.hpp"
#include "rdst/param_store.hpp"
#include "rdst/swin.hpp"

namespace rdst {

enum class UpsamplerStyle { kProgressive, kSingle, kDirect };

struct RdstConfig {
    int scale = 4;
    std::int64_t channels = 1;
    std::int64_t d = 60;
    std::int64_t g = 30;
    std::int64_t window = 8;
    std::int64_t heads = 6;
    double mlp_ratio = 2.0;
    int stl_per_dstb = 2;
    int dstb_per_rdstb = 3;
    int n_rdstb = 8;
    bool use_gff = false;
    bool rel_pos_bias = true;
    UpsamplerStyle upsampler = UpsamplerStyle::kProgressive;
    /// Multiplier on the Kaiming draw of every layer that closes a branch
    /// (attention and MLP projections, DSTB bottleneck, LFF) and of the
    /// output conv. 1 gives plain Kaiming everywhere.
    double branch_init = 0.1;

    static RdstConfig rdst();
    static RdstConfig rdst_e();
    /// d = 24, g = 12, 2 RDSTBs; the desk-scale training model.
    static RdstConfig tiny();

    /// Throws ShapeError/ConfigError on an inconsistent configuration.
    void validate() const;
    /// Width entering DSTB j (0-based) of an RDSTB.
    std::int64_t dstb_width(int j) const { return d + j * g; }
    /// Shuffle factors of the upsampler, e.g. {2, 2} for progressive x4.
    std::vector<int> shuffle_factors() const;

    std::map<std::string, std::string> to_meta() const;
    static RdstConfig from_meta(const std::map<std::string, std::string>& meta);
    /// Reads `model.preset` then any explicit `model.*` overrides.
    static RdstConfig from_config(const Config& cfg);
};

std::string to_string(UpsamplerStyle style);
UpsamplerStyle parse_upsampler(const std::string& text);

/// Plug-in interface for super-resolution networks.
class SrModel {
   public:
    virtual ~SrModel() = default;
    /// Differentiable forward pass [N,C,H,W] -> [N,C,sH,sW] (records on the active tape).
    virtual Tensor forward(const Tensor& lr) const = 0;
    /// Forward without recording, output clamped to [0, 1].
    Tensor infer(const Tensor& lr) const;
    virtual ParamStore& params() = 0;
    virtual const ParamStore& params() const = 0;
    virtual nn::CostReport cost(const nn::FeatureShape& input) const = 0;
    virtual int scale() const = 0;
    virtual std::string kind() const = 0;
};

/// Residual dense swin transformer.
///
/// Tensor names: head, body.<i>.dstb.<j>.stl.<k>.*, body.<i>.dstb.<j>.bottleneck,
/// body.<i>.lff, gff, body_conv, upsampler.<k>, tail.
class RdstModel final : public SrModel {
   public:
    RdstModel(const RdstConfig& cfg, std::uint64_t seed, DType dtype = DType::kF32);

    Tensor forward(const Tensor& lr) const override;
    ParamStore& params() override { return params_; }
    const ParamStore& params() const override { return params_; }
    nn::CostReport cost(const nn::FeatureShape& input) const override;
    int scale() const override { return cfg_.scale; }
    std::string kind() const override { return "rdst"; }
    const RdstConfig& config() const { return cfg_; }
    DType dtype() const { return dtype_; }

    /// [N, d + j g, H, W] -> [N, d + (j+1) g, H, W] for DSTB j of RDSTB i.
    Tensor dstb_forward(int i, int j, const Tensor& x) const;
    /// [N, d, H, W] -> [N, d, H, W].
    Tensor rdstb_forward(int i, const Tensor& x) const;
    /// Fuses the per-RDSTB outputs into one [N, d, H, W] map.
    Tensor gff_forward(const std::vector<Tensor>& block_outputs) const;
    /// Output of the body before the global residual: last RDSTB (or GFF) then body_conv.
    Tensor body_forward(const Tensor& features) const;

   private:
    struct Dstb {
        std::vector<swin::StlPair> pairs;
        nn::Linear bottleneck;
    };
    struct Rdstb {
        std::vector<Dstb> dstbs;
        nn::Conv2d lff;
    };

    Tensor dstb_tokens(int i, int j, const Tensor& tokens) const;

    RdstConfig cfg_;
    DType dtype_;
    ParamStore params_;
    nn::Conv2d head_;
    std::vector<Rdstb> body_;
    nn::Conv2d gff_;
    nn::Conv2d body_conv_;
    std::vector<nn::Conv2d> upsampler_;
    std::vector<int> factors_;
    nn::Conv2d tail_;
    bool has_tail_ = true;
};

/// Parameter-free bicubic interpolation, the reference baseline.
class BicubicModel final : public SrModel {
   public:
    explicit BicubicModel(int scale) : scale_(scale) {}
    Tensor forward(const Tensor& lr) const override;
    ParamStore& params() override { return params_; }
    const ParamStore& params() const override { return params_; }
    nn::CostReport cost(const nn::FeatureShape&) const override { return {}; }
    int scale() const override { return scale_; }
    std::string kind() const override { return "bicubic"; }

   private:
    int scale_;
    ParamStore params_;
};

}  // namespace rdst

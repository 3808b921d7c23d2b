#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "rdst/detail/gemm.hpp"
#include "rdst/ops.hpp"
#include "rdst/rdst_model.hpp"

using namespace rdst;
using rdst::testing::gradcheck_sampled;
using rdst::testing::random_tensor;

namespace {

RdstConfig micro() {
    RdstConfig c;
    c.scale = 2;
    c.d = 12;
    c.g = 6;
    c.n_rdstb = 1;
    c.window = 4;
    c.heads = 2;
    return c;
}

void fill(ParamStore& ps, std::mt19937_64& rng, double scale, const std::string& prefix = "") {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& [name, t] : ps.entries()) {
        if (name.rfind(prefix, 0) != 0) continue;
        const bool gain = name.ends_with("ln1.w") || name.ends_with("ln2.w");
        for (auto& v : t.mutable_data<double>()) v = u(rng) + (gain ? 1.0 : 0.0);
    }
}

void zero(ParamStore& ps, const std::string& prefix) {
    for (auto& [name, t] : ps.entries()) {
        if (name.rfind(prefix, 0) != 0) continue;
        for (auto& v : t.mutable_data<double>()) v = 0.0;
    }
}

}  // namespace

TEST(RdstConfig, PresetsAndValidation) {
    EXPECT_EQ(RdstConfig::rdst().n_rdstb, 8);
    EXPECT_EQ(RdstConfig::rdst_e().n_rdstb, 4);
    EXPECT_EQ(RdstConfig::tiny().d, 24);
    EXPECT_EQ(RdstConfig::rdst().shuffle_factors(), (std::vector<int>{2, 2}));
    RdstConfig bad = RdstConfig::rdst();
    bad.g = 31;
    EXPECT_THROW(bad.validate(), ShapeError);
}

TEST(RdstConfig, MetaRoundTrip) {
    RdstConfig c = micro();
    c.use_gff = true;
    c.upsampler = UpsamplerStyle::kSingle;
    RdstConfig back = RdstConfig::from_meta(c.to_meta());
    EXPECT_EQ(back.to_meta(), c.to_meta());
}

TEST(RdstConfig, FromConfigAppliesPresetThenOverrides) {
    Config cfg = Config::defaults();
    cfg.set("model.preset", "tiny");
    EXPECT_EQ(RdstConfig::from_config(cfg).d, 24);
    cfg.set("model.n_rdstb", "3");
    EXPECT_EQ(RdstConfig::from_config(cfg).n_rdstb, 3);
    cfg.set("model.preset", "nope");
    EXPECT_THROW(RdstConfig::from_config(cfg), ConfigError);
}

TEST(RdstModel, OutputShapes) {
    RdstModel full(RdstConfig::rdst(), 1);
    EXPECT_EQ(full.forward(Tensor::zeros({1, 1, 24, 24})).shape(), (Shape{1, 1, 96, 96}));
    EXPECT_EQ(full.forward(Tensor::zeros({1, 1, 40, 32})).shape(), (Shape{1, 1, 160, 128}));
    for (auto style : {UpsamplerStyle::kSingle, UpsamplerStyle::kDirect}) {
        RdstConfig c = micro();
        c.scale = 3;
        c.upsampler = style;
        RdstModel m(c, 1);
        EXPECT_EQ(m.forward(Tensor::zeros({2, 1, 5, 7})).shape(), (Shape{2, 1, 15, 21}));
    }
}

TEST(RdstModel, DstbAppendsGrowthChannels) {
    std::mt19937_64 rng(1);
    RdstModel m(RdstConfig::rdst(), 2, DType::kF64);
    auto x = random_tensor({1, 60, 8, 8}, rng);
    auto y = m.dstb_forward(0, 0, x);
    EXPECT_EQ(y.shape(), (Shape{1, 90, 8, 8}));
    EXPECT_TRUE(bitwise_equal(slice(y, 1, 0, 60), x));
    EXPECT_THROW(m.dstb_forward(0, 1, x), ShapeError);

    zero(m.params(), "body.0.dstb.0.bottleneck");
    for (double v : slice(m.dstb_forward(0, 0, x), 1, 60, 30).to_vector()) ASSERT_EQ(v, 0.0);
}

TEST(RdstModel, RdstbIsResidual) {
    std::mt19937_64 rng(2);
    RdstModel m(micro(), 3, DType::kF64);
    fill(m.params(), rng, 0.2);
    auto x = random_tensor({2, 12, 8, 8}, rng);
    EXPECT_EQ(m.rdstb_forward(0, x).shape(), x.shape());
    EXPECT_FALSE(bitwise_equal(m.rdstb_forward(0, x), x));
    zero(m.params(), "body.0.");
    EXPECT_TRUE(bitwise_equal(m.rdstb_forward(0, x), x));
}

TEST(RdstModel, WidthSequenceOfDefaultBlock) {
    RdstConfig c = RdstConfig::rdst();
    std::vector<std::int64_t> widths;
    for (int j = 0; j <= c.dstb_per_rdstb; ++j) widths.push_back(c.dstb_width(j));
    EXPECT_EQ(widths, (std::vector<std::int64_t>{60, 90, 120, 150}));
    RdstModel m(c, 1);
    EXPECT_EQ(m.params().get("body.0.lff.w").shape(), (Shape{60, 150, 3, 3}));
}

TEST(RdstModel, ZeroInputGivesZeroOutput) {
    RdstModel m(micro(), 4, DType::kF64);
    for (double v : m.forward(Tensor::zeros({1, 1, 8, 8}, DType::kF64)).to_vector()) ASSERT_EQ(v, 0.0);
}

TEST(RdstModel, ForwardIsBitwiseDeterministic) {
    std::mt19937_64 rng(5);
    auto x = random_tensor({1, 1, 12, 12}, rng, 0, 1, DType::kF32);
    RdstModel a(RdstConfig::tiny(), 9), b(RdstConfig::tiny(), 9);
    EXPECT_TRUE(bitwise_equal(a.forward(x), a.forward(x)));
    EXPECT_TRUE(bitwise_equal(a.forward(x), b.forward(x)));
    RdstModel c(RdstConfig::tiny(), 10);
    EXPECT_FALSE(bitwise_equal(a.forward(x), c.forward(x)));
}

TEST(RdstModel, InferClampsAndRecordsNothing) {
    std::mt19937_64 rng(6);
    RdstModel m(micro(), 4, DType::kF64);
    fill(m.params(), rng, 0.5);
    auto x = random_tensor({1, 1, 8, 8}, rng, 0, 1);
    Tape tape;
    Tape::Scope scope(tape);
    auto y = m.infer(x);
    EXPECT_EQ(tape.size(), 0u);
    for (double v : y.to_vector()) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
    }
}

TEST(RdstModel, ParameterCountIsAPureFunctionOfConfig) {
    RdstModel a(RdstConfig::tiny(), 1), b(RdstConfig::tiny(), 77);
    EXPECT_EQ(a.params().count(), b.params().count());
    EXPECT_EQ(a.cost({1, 1, 24, 24}).total_params(), a.params().count());
}

TEST(RdstModel, CalibrationAgainstPublishedBudgets) {
    const nn::FeatureShape in{1, 1, 40, 32};
    RdstModel full(RdstConfig::rdst(), 1), efficient(RdstConfig::rdst_e(), 1);
    const auto fc = full.cost(in), ec = efficient.cost(in);
    EXPECT_EQ(fc.total_params(), full.params().count());
    EXPECT_EQ(ec.total_params(), efficient.params().count());
    EXPECT_EQ(full.params().count(), 4460401);
    EXPECT_EQ(efficient.params().count(), 2376841);
    EXPECT_NEAR(fc.total_params() / 4.40e6, 1.0, 0.03);
    EXPECT_NEAR(ec.total_params() / 2.35e6, 1.0, 0.03);
    EXPECT_NEAR(fc.total_macs() / 6.17e9, 1.0, 0.10);
    EXPECT_NEAR(ec.total_macs() / 3.53e9, 1.0, 0.10);
    // Per-block breakdown sums to the totals.
    const auto g = fc.grouped(2);
    EXPECT_EQ(g.total_params(), fc.total_params());
    EXPECT_EQ(g.total_macs(), fc.total_macs());
    EXPECT_NE(g.to_text().find("body.7"), std::string::npos);
}

TEST(RdstModel, ForwardMacsMatchCostReport) {
    // The GEMM counter sees convs and linears plus the two attention matmuls.
    RdstModel m(RdstConfig::tiny(), 1);
    const auto before = detail::mac_counter();
    m.infer(Tensor::zeros({1, 1, 16, 16}));
    const auto counted = detail::mac_counter() - before;
    EXPECT_EQ(counted, m.cost({1, 1, 16, 16}).total_macs());
}

TEST(Gff, AddsOneAffineMapOverAllBlocks) {
    RdstConfig with = RdstConfig::rdst();
    with.use_gff = true;
    RdstModel a(RdstConfig::rdst(), 1), b(with, 1);
    EXPECT_EQ(b.params().count() - a.params().count(), 8 * 60 * 60 + 60);
    EXPECT_EQ(b.params().count() - a.params().count(), 28860);
    EXPECT_EQ(b.cost({1, 1, 40, 32}).total_params(), b.params().count());
}

TEST(Gff, IdentityFusionOfOneBlockEqualsPlainBody) {
    std::mt19937_64 rng(7);
    RdstConfig c = micro();
    c.use_gff = true;
    RdstModel fused(c, 3, DType::kF64);
    RdstModel plain(micro(), 3, DType::kF64);
    fill(plain.params(), rng, 0.2);
    ParamStore& fp = fused.params();
    fp.load_from(plain.params());
    auto& w = fp.get("gff.w");
    zero(fp, "gff.");
    for (std::int64_t i = 0; i < 12; ++i) w.mutable_data<double>()[i * 12 + i] = 1.0;
    auto x = random_tensor({1, 12, 8, 8}, rng);
    auto a = fused.body_forward(x).to_vector(), b = plain.body_forward(x).to_vector();
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-14);
    EXPECT_EQ(fused.gff_forward({x}).shape(), x.shape());
    EXPECT_THROW(plain.gff_forward({x}), std::logic_error);
}

TEST(RdstModel, EndToEndGradientOnTinyConfig) {
    std::mt19937_64 rng(8);
    RdstConfig c = micro();
    RdstModel m(c, 5, DType::kF64);
    fill(m.params(), rng, 0.15);
    auto x = random_tensor({1, 1, 8, 8}, rng, 0, 1);
    auto wsum = random_tensor({1, 1, 16, 16}, rng);
    std::vector<Tensor> inputs{x};
    for (auto& [name, t] : m.params().entries()) inputs.push_back(t);
    auto f = [&](const std::vector<Tensor>& in) { return sum(mul(m.forward(in[0]), wsum)); };
    auto r = gradcheck_sampled(f, inputs, 6, 99);
    EXPECT_LT(r.rel_error, 1e-4);
    EXPECT_GT(r.max_abs_analytic, 0.0);
}

TEST(BicubicModel, UpsamplesWithoutParameters) {
    BicubicModel b(4);
    EXPECT_EQ(b.params().size(), 0u);
    EXPECT_EQ(b.forward(Tensor::full({1, 1, 3, 5}, 0.25)).shape(), (Shape{1, 1, 12, 20}));
}

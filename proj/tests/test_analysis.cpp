#include <gtest/gtest.h>

#include "bireal/analysis.hpp"

using namespace bireal;

namespace {

void expect_within(double got, double want, double rel) { EXPECT_NEAR(got, want, rel * want) << "want " << want; }

}  // namespace

TEST(Cost, Bireal18MatchesReferenceTotals) {
    const auto rep = analyze(preset("bireal18"));
    expect_within(static_cast<double>(rep.total.memory_bits()), 33.6e6, 0.02);
    expect_within(rep.total.flops(), 1.63e8, 0.02);
    expect_within(rep.memory_saving_ratio, 11.14, 0.02);
    expect_within(rep.speedup_ratio, 11.06, 0.02);
    expect_within(static_cast<double>(memory_bits(preset("bireal18").with_precision(Precision::Full))), 374.1e6, 0.02);
    expect_within(flops(preset("bireal18").with_precision(Precision::Full)), 1.81e9, 0.02);
}

TEST(Cost, Bireal34MatchesReferenceTotals) {
    const auto rep = analyze(preset("bireal34"));
    expect_within(static_cast<double>(rep.total.memory_bits()), 43.7e6, 0.02);
    expect_within(rep.total.flops(), 1.93e8, 0.02);
    expect_within(rep.memory_saving_ratio, 15.97, 0.02);
    expect_within(rep.speedup_ratio, 18.99, 0.02);
    expect_within(static_cast<double>(memory_bits(preset("bireal34").with_precision(Precision::Full))), 697.3e6, 0.02);
    expect_within(flops(preset("bireal34").with_precision(Precision::Full)), 3.66e9, 0.02);
}

TEST(Cost, SelfBaselineGivesUnitRatios) {
    const auto s = preset("bireal18");
    const auto rep = analyze(s, s);
    EXPECT_DOUBLE_EQ(rep.memory_saving_ratio, 1.0);
    EXPECT_DOUBLE_EQ(rep.speedup_ratio, 1.0);
    const auto r = compare(s, s);
    EXPECT_DOUBLE_EQ(r.params, 1.0);
}

TEST(Cost, HandCountedSmallNetwork) {
    // 1x4x4 input, real stem 2ch 3x3 pad 1, one Bi-Real stage of one 3x3 conv
    // to 4 channels at stride 2 (so a 1x1 downsample), 3 classes.
    NetworkSpec s;
    s.input_channels = 1;
    s.input_height = s.input_width = 4;
    s.num_classes = 3;
    s.stem = StemSpec{2, 3, 1, 1, false};
    s.stages = {{4, 1, 2}};
    const auto rows = cost_rows(s);
    ASSERT_EQ(rows.size(), 7u);  // stem conv+bn, conv+bn, downsample conv+bn, fc
    CostRow want;
    // stem: 18 real weights, 2*16 outputs * 9 mults; bn 4
    want.real_params += 18 + 4;
    want.real_flops += 2 * 16 * 9;
    // block conv: 4*2*9 = 72 binary weights, 4*2*2 outputs * 18 fan-in; bn 8
    want.binary_params += 72;
    want.binary_ops += 16 * 18;
    want.real_params += 8;
    // downsample: 8 real weights, 16 outputs * 2 fan-in; bn 8
    want.real_params += 8 + 8;
    want.real_flops += 16 * 2;
    // fc: 12 weights + 3 bias, 12 mults
    want.real_params += 15;
    want.real_flops += 12;
    const auto t = cost_total(rows);
    EXPECT_EQ(t.real_params, want.real_params);
    EXPECT_EQ(t.binary_params, want.binary_params);
    EXPECT_EQ(t.real_flops, want.real_flops);
    EXPECT_EQ(t.binary_ops, want.binary_ops);
    EXPECT_EQ(t.memory_bits(), 32 * want.real_params + 72);
    EXPECT_DOUBLE_EQ(t.flops(), static_cast<double>(want.real_flops) + 288.0 / 64.0);
}

TEST(Cost, FullPrecisionTwinChargesAllConvsAsReal) {
    const auto s = preset("tiny").with_precision(Precision::Full);
    for (const auto& r : cost_rows(s)) {
        EXPECT_EQ(r.binary_params, 0u) << r.name;
        EXPECT_EQ(r.binary_ops, 0u) << r.name;
    }
}

TEST(Cost, InputSizeScalesFlopsNotMemory) {
    const auto a = preset("bireal18");
    const auto b = a.with_input_size(112, 112);
    EXPECT_EQ(memory_bits(a), memory_bits(b));
    EXPECT_LT(flops(b), flops(a));
    EXPECT_THROW(analyze(a.with_input_size(0, 0)), SpecError);
}

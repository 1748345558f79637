#include <gtest/gtest.h>

#include <random>
#include <set>

#include "bireal/conv.hpp"
#include "oracles.hpp"

using namespace bireal;

namespace {

struct Case {
    Shape a;
    ConvGeometry g;
};

Case random_case(std::mt19937_64& rng) {
    Case c;
    c.g.in_channels = 1 + rng() % 70;
    c.g.out_channels = 1 + rng() % 5;
    c.g.kernel_h = 1 + rng() % 4;
    c.g.kernel_w = 1 + rng() % 4;
    c.g.stride = 1 + rng() % 3;
    c.g.padding = rng() % 3;
    const std::size_t h = c.g.kernel_h + rng() % 6, w = c.g.kernel_w + rng() % 6;
    c.a = {1 + rng() % 2, c.g.in_channels, h, w};
    return c;
}

}  // namespace

TEST(Geometry, OutputExtentsAndErrors) {
    const ConvGeometry g{3, 8, 3, 3, 2, 1};
    EXPECT_EQ(g.out_h(5), 3u);
    EXPECT_EQ(g.out_w(224), 112u);
    EXPECT_THROW((ConvGeometry{1, 1, 5, 5, 1, 0}.out_h(3)), ShapeError);
    EXPECT_THROW((ConvGeometry{1, 1, 3, 3, 0, 0}.validate()), ShapeError);
}

TEST(Geometry, MismatchNamesAxis) {
    const ConvGeometry g{3, 4, 3, 3, 1, 1};
    try {
        float_conv2d(RealTensor({1, 2, 5, 5}), RealTensor({4, 3, 3, 3}), g);
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("axis C"), std::string::npos);
    }
    try {
        float_conv2d(RealTensor({1, 3, 5, 5}), RealTensor({4, 3, 2, 3}), g);
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("axis Kh"), std::string::npos);
    }
}

TEST(FloatConv, OneByOneIdentity) {
    std::mt19937_64 rng(1);
    const auto a = oracle::random_tensor<float>({2, 1, 4, 5}, rng);
    const auto y = float_conv2d(a, RealTensor({1, 1, 1, 1}, 1.0f), ConvGeometry{1, 1, 1, 1, 1, 0});
    EXPECT_EQ(y, a);
}

TEST(FloatConv, DeltaKernelSamePadding) {
    std::mt19937_64 rng(2);
    const auto a = oracle::random_tensor<float>({1, 1, 6, 6}, rng);
    RealTensor w({1, 1, 3, 3});
    w.at(0, 0, 1, 1) = 1.0f;
    EXPECT_EQ(float_conv2d(a, w, ConvGeometry{1, 1, 3, 3, 1, 1}), a);
}

TEST(FloatConv, WindowSums) {
    RealTensor a({1, 1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) a[i] = static_cast<float>(i);
    const auto y = float_conv2d(a, RealTensor({1, 1, 2, 2}, 1.0f), ConvGeometry{1, 1, 2, 2, 2, 0});
    // 0+1+4+5, 2+3+6+7, 8+9+12+13, 10+11+14+15
    EXPECT_EQ(y, RealTensor({1, 1, 2, 2}, {10, 18, 42, 50}));
}

TEST(FloatConv, MatchesDirectLoopWithPadValue) {
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 30; ++rep) {
        const auto c = random_case(rng);
        const auto a = oracle::random_tensor<double>(c.a, rng);
        const auto w = oracle::random_tensor<double>(c.g.weight_shape(), rng);
        for (double pad : {0.0, -1.0}) {
            const auto got = float_conv2d(a, w, c.g, pad);
            const auto want = oracle::conv2d(a, w, c.g, pad);
            ASSERT_EQ(got.shape(), want.shape());
            for (std::size_t i = 0; i < got.numel(); ++i) EXPECT_NEAR(got[i], want[i], 1e-9);
        }
    }
}

TEST(FloatConvBackward, ZeroGradOut) {
    std::mt19937_64 rng(4);
    const ConvGeometry g{2, 3, 3, 3, 1, 1};
    const auto a = oracle::random_tensor<float>({1, 2, 4, 4}, rng);
    const auto w = oracle::random_tensor<float>(g.weight_shape(), rng);
    const auto gr = float_conv2d_backward(RealTensor({1, 3, 4, 4}), a, w, g);
    for (float v : gr.grad_a.data()) EXPECT_EQ(v, 0.0f);
    for (float v : gr.grad_w.data()) EXPECT_EQ(v, 0.0f);
}

TEST(FloatConvBackward, OneByOneWeightGradIsDot) {
    std::mt19937_64 rng(5);
    const ConvGeometry g{1, 1, 1, 1, 1, 0};
    const auto a = oracle::random_tensor<double>({1, 1, 3, 3}, rng);
    const auto go = oracle::random_tensor<double>({1, 1, 3, 3}, rng);
    const auto gr = float_conv2d_backward(go, a, Tensor<double>({1, 1, 1, 1}, 0.7), g);
    EXPECT_NEAR(gr.grad_w[0], oracle::dot(go, a), 1e-12);
}

TEST(FloatConvBackward, MatchesFiniteDifferences) {
    std::mt19937_64 rng(6);
    for (double pad : {0.0, -1.0}) {
        const ConvGeometry g{2, 3, 3, 2, 2, 1};
        auto a = oracle::random_tensor<double>({2, 2, 5, 4}, rng);
        auto w = oracle::random_tensor<double>(g.weight_shape(), rng);
        const auto go = oracle::random_tensor<double>(float_conv2d(a, w, g, pad).shape(), rng);
        const auto gr = float_conv2d_backward(go, a, w, g, pad);
        auto loss = [&] { return oracle::dot(go, float_conv2d(a, w, g, pad)); };
        for (std::size_t i = 0; i < a.numel(); ++i)
            EXPECT_NEAR(gr.grad_a[i], oracle::central_difference(a, i, 1e-3, loss), 1e-4);
        for (std::size_t i = 0; i < w.numel(); ++i)
            EXPECT_NEAR(gr.grad_w[i], oracle::central_difference(w, i, 1e-3, loss), 1e-4);
    }
}

TEST(BinConv, AllOnesNoPadding) {
    const ConvGeometry g{3, 2, 3, 3, 1, 0};
    const auto a = sign_pack(RealTensor({1, 3, 5, 5}, 1.0f));
    const auto w = sign_pack(RealTensor(g.weight_shape(), 1.0f));
    const auto out = binconv2d(a, w, g);
    for (float v : out.data()) EXPECT_EQ(v, 27.0f);
}

TEST(BinConv, SmallCaseMatchesFloatOracle) {
    std::mt19937_64 rng(7);
    const ConvGeometry g{3, 4, 3, 3, 2, 1};
    const auto a = oracle::random_signs<float>({2, 3, 5, 5}, rng);
    const auto w = oracle::random_signs<float>(g.weight_shape(), rng);
    EXPECT_EQ(binconv2d(sign_pack(a), sign_pack(w), g), float_conv2d(a, w, g, -1.0f));
}

TEST(BinConv, Fig3GeometryHas289EvenValues) {
    std::mt19937_64 rng(8);
    const ConvGeometry g{32, 1, 3, 3, 1, 1};
    const auto a = oracle::random_signs<float>({1, 32, 14, 14}, rng);
    const auto w = oracle::random_signs<float>(g.weight_shape(), rng);
    const auto y = binconv2d(sign_pack(a), sign_pack(w), g);
    for (float v : y.data()) {
        EXPECT_GE(v, -288.0f);
        EXPECT_LE(v, 288.0f);
        EXPECT_EQ(static_cast<int>(v) % 2, 0);
    }
}

TEST(BinConv, RandomCasesMatchOracleWithRangeAndParity) {
    std::mt19937_64 rng(9);
    for (int rep = 0; rep < 200; ++rep) {
        const auto c = random_case(rng);
        const auto a = oracle::random_signs<float>(c.a, rng);
        const auto w = oracle::random_signs<float>(c.g.weight_shape(), rng);
        const auto y = binconv2d(sign_pack(a), sign_pack(w), c.g);
        ASSERT_EQ(y, oracle::conv2d(a, w, c.g, -1.0f)) << "case " << rep;
        const int n = static_cast<int>(c.g.fan_in());
        for (float v : y.data()) {
            ASSERT_LE(std::abs(v), n);
            ASSERT_EQ((static_cast<int>(v) - n) % 2, 0);
        }
    }
}

TEST(BinConv, ThreadCountDoesNotChangeResult) {
    std::mt19937_64 rng(10);
    const ConvGeometry g{16, 8, 3, 3, 1, 1};
    const auto a = sign_pack(oracle::random_signs<float>({3, 16, 9, 9}, rng));
    const auto w = sign_pack(oracle::random_signs<float>(g.weight_shape(), rng));
    const auto ref = binconv2d(a, w, g, 1);
    for (unsigned t : {2u, 3u, 8u, 64u}) EXPECT_EQ(binconv2d(a, w, g, t), ref);
}

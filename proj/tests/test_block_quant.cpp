#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "ternpack/block_quant.hpp"

using namespace ternpack;

namespace {

BlockValues block_of(std::initializer_list<float> head) {
    BlockValues v{};
    std::copy(head.begin(), head.end(), v.begin());
    return v;
}

// Scalar reference: digit by comparison against half the stored scale.
int reference_digit(float x, float scale) {
    if (scale == 0.0f) return 1;
    const double ax = std::fabs(static_cast<double>(x));
    if (2.0 * ax < static_cast<double>(scale)) return 1;
    return x > 0 ? 2 : 0;
}

BlockValues random_block(std::mt19937_64& rng, float lo, float hi) {
    std::uniform_real_distribution<float> u(lo, hi);
    BlockValues v{};
    for (auto& x : v) x = u(rng);
    return v;
}

} // namespace

TEST(BlockQuantTest, TernaryInputAtUnitScale) {
    const auto v = block_of({1.0f, -1.0f, 0.0f, 0.0f});
    const TQ2Block b = quantize_block_tq2(v);
    EXPECT_EQ(b.scale_f32(), 1.0f);
    const auto d = b.digits();
    EXPECT_EQ(d[0], 2);
    EXPECT_EQ(d[1], 0);
    EXPECT_EQ(d[2], 1);
    EXPECT_EQ(d[3], 1);
}

TEST(BlockQuantTest, ZeroBlock) {
    const BlockValues zeros{};
    const TQ2Block b2 = quantize_block_tq2(zeros);
    EXPECT_EQ(b2.scale, 0);
    for (auto d : b2.digits()) ASSERT_EQ(d, 1);
    for (float x : dequantize_block_tq2(b2)) ASSERT_EQ(x, 0.0f);

    const TQ1Block b1 = quantize_block_tq1(zeros);
    EXPECT_EQ(b1.scale, 0);
    for (auto byte : b1.qs) ASSERT_EQ(byte, 128);
    for (float x : dequantize_block_tq1(b1)) ASSERT_EQ(x, 0.0f);
}

TEST(BlockQuantTest, RoundHalfAwayFromZero) {
    const auto v = block_of({0.5f, -0.25f, 0.74f, -0.76f, 1.0f, -0.5f});
    const auto d = quantize_block_tq2(v).digits();
    const std::array<int, 6> expected{2, 1, 2, 0, 2, 0};
    for (std::size_t i = 0; i < expected.size(); ++i) {
        EXPECT_EQ(d[i], expected[i]) << i;
        EXPECT_EQ(d[i], reference_digit(v[i], 1.0f)) << i;
    }
}

TEST(BlockQuantTest, DequantizeExamples) {
    TQ2Block b;
    b.scale = fp32_to_fp16(1.0f);
    b.qs.fill(0x55);
    b.qs[0] = static_cast<std::uint8_t>(2 | (0 << 2) | (1 << 4) | (1 << 6));
    const auto out = dequantize_block_tq2(b);
    EXPECT_EQ(out[0], 1.0f);
    EXPECT_EQ(out[1], -1.0f);
    EXPECT_EQ(out[2], 0.0f);

    b.scale = 0;
    for (float x : dequantize_block_tq2(b)) ASSERT_EQ(x, 0.0f);
}

TEST(BlockQuantTest, Tq1SaturatedBlock) {
    BlockValues v;
    v.fill(3.0f);
    const TQ1Block b = quantize_block_tq1(v);
    EXPECT_EQ(b.scale_f32(), 3.0f);
    for (std::size_t i = 0; i < TQ1Block::kFullCodes; ++i) ASSERT_EQ(b.qs[i], 255);
    // tail: digits (2,1,1,1,1) -> N = 202 -> floor((202*256 + 242)/243) = 213
    EXPECT_EQ(b.qs[TQ1Block::kFullCodes], 213);
    for (float x : dequantize_block_tq1(b)) ASSERT_EQ(x, 3.0f);
}

TEST(BlockQuantTest, SerializedSizes) {
    EXPECT_EQ(TQ2Block::kBytes, 66u);
    EXPECT_EQ(TQ1Block::kBytes, 54u);
    EXPECT_DOUBLE_EQ(bits_per_weight(BlockFormat::TQ2), 2.0625);
    EXPECT_DOUBLE_EQ(bits_per_weight(BlockFormat::TQ1), 1.6875);
}

TEST(BlockQuantTest, SerializationLayout) {
    std::mt19937_64 rng(3);
    const auto v = random_block(rng, -2.0f, 2.0f);
    const TQ2Block b2 = quantize_block_tq2(v);
    std::array<std::uint8_t, 66> bytes2{};
    b2.write_to(bytes2);
    EXPECT_TRUE(std::equal(b2.qs.begin(), b2.qs.end(), bytes2.begin()));
    EXPECT_EQ(bytes2[64], b2.scale & 0xff);
    EXPECT_EQ(bytes2[65], b2.scale >> 8);
    EXPECT_EQ(TQ2Block::read_from(bytes2), b2);

    const TQ1Block b1 = quantize_block_tq1(v);
    std::array<std::uint8_t, 54> bytes1{};
    b1.write_to(bytes1);
    EXPECT_EQ(bytes1[52], b1.scale & 0xff);
    EXPECT_EQ(bytes1[53], b1.scale >> 8);
    EXPECT_EQ(TQ1Block::read_from(bytes1), b1);
}

TEST(BlockQuantTest, ErrorBoundProperty) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<float> range(1e-6f, 100.0f);
    for (int iter = 0; iter < 10000; ++iter) {
        const float r = range(rng);
        const auto v = random_block(rng, -r, r);
        float amax = 0.0f;
        for (float x : v) amax = std::max(amax, std::fabs(x));
        const TQ2Block b2 = quantize_block_tq2(v);
        const TQ1Block b1 = quantize_block_tq1(v);
        ASSERT_EQ(b1.digits(), b2.digits());
        const double s16 = b2.scale_f32();
        const double bound = s16 / 2.0 + std::fabs(static_cast<double>(amax) - s16);
        const auto out2 = dequantize_block_tq2(b2);
        const auto out1 = dequantize_block_tq1(b1);
        for (std::size_t i = 0; i < kBlockSize; ++i) {
            ASSERT_LE(std::fabs(static_cast<double>(v[i]) - out2[i]), bound);
            ASSERT_EQ(out1[i], out2[i]);
            ASSERT_EQ(b2.digits()[i], reference_digit(v[i], b2.scale_f32()));
        }
    }
}

TEST(BlockQuantTest, TinyScaleUnderflowsToZeroBlock) {
    const auto v = block_of({1e-9f, -2e-9f});
    const TQ2Block b = quantize_block_tq2(v);
    EXPECT_EQ(b.scale_f32(), 0.0f);
    for (auto d : b.digits()) ASSERT_EQ(d, 1);
}

TEST(BlockQuantTest, ExactOnRepresentableTernaryInput) {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> trit(-1, 1);
    for (float s : {0.125f, 1.0f, 0.0999755859375f /* binary16-exact */, 1024.0f}) {
        BlockValues v{};
        for (auto& x : v) x = s * static_cast<float>(trit(rng));
        v[7] = s;
        EXPECT_EQ(dequantize_block_tq2(quantize_block_tq2(v)), v);
        EXPECT_EQ(dequantize_block_tq1(quantize_block_tq1(v)), v);
    }
}

TEST(BlockQuantTest, Tq1PayloadIsCanonical) {
    std::mt19937_64 rng(8);
    for (int iter = 0; iter < 1000; ++iter) {
        const auto v = random_block(rng, -1.0f, 1.0f);
        const TQ1Block b = quantize_block_tq1(v);
        for (std::uint8_t code : b.qs) {
            const auto trits = decode_trit_block_canonical(PackedCode{code, 0}, kFiveTritsPerByte);
            ASSERT_EQ(encode_trit_block(trits, kFiveTritsPerByte).code, code);
        }
    }
}

TEST(BlockQuantTest, Errors) {
    auto v = block_of({1.0f});
    v[10] = NAN;
    EXPECT_THROW(quantize_block_tq2(v), QuantizationError);
    v[10] = INFINITY;
    EXPECT_THROW(quantize_block_tq1(v), QuantizationError);
    v[10] = 1e6f; // absmax overflows binary16
    EXPECT_THROW(quantize_block_tq2(v), QuantizationError);
}

TEST(TernarizeTest, HandExample) {
    const std::vector<float> w{0.3f, -0.6f, 0.9f, 0.0f};
    const auto t = ternarize(w, 2, 2, 1e-12);
    EXPECT_NEAR(t.gamma, 0.45, 1e-7);
    EXPECT_EQ(t.trits, (TritSequence{1, -1, 1, 0}));
}

TEST(TernarizeTest, ZeroMatrix) {
    const std::vector<float> w(6, 0.0f);
    const auto t = ternarize(w, 2, 3);
    EXPECT_EQ(t.gamma, kDefaultTernarizeEpsilon);
    for (auto x : t.trits) EXPECT_EQ(x, 0);
}

TEST(TernarizeTest, RecoversSignPatternOfTernaryMatrix) {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> trit(-1, 1);
    const float mag = 0.7f;
    std::vector<float> w(64 * 64);
    TritSequence signs(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        signs[i] = static_cast<Trit>(trit(rng));
        w[i] = mag * signs[i];
    }
    const auto t = ternarize(w, 64, 64);
    // gamma is the mean magnitude <= mag, so |w|/gamma >= 1 for nonzeros
    EXPECT_EQ(t.trits, signs);
    for (double x : t.reconstruct()) {
        EXPECT_TRUE(x == 0.0 || x == t.gamma || x == -t.gamma);
    }
}

TEST(TernarizeTest, MatchesScalarOracle) {
    std::mt19937_64 rng(6);
    std::normal_distribution<float> n(0.0f, 1.0f);
    std::vector<float> w(37 * 19);
    for (auto& x : w) x = n(rng);
    const auto t = ternarize(w, 37, 19, 1e-5);
    double sum = 0.0;
    for (float x : w) sum += std::fabs(x);
    const double gamma = 1e-5 + sum / static_cast<double>(w.size());
    EXPECT_NEAR(t.gamma, gamma, 1e-12);
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double q = w[i] / gamma;
        const int expected = q >= 0.5 ? 1 : (q <= -0.5 ? -1 : 0);
        ASSERT_EQ(t.trits[i], expected) << i;
    }
}

TEST(TernarizeTest, Errors) {
    const std::vector<float> w{1.0f};
    EXPECT_THROW(ternarize({}, 0, 0), ValidationError);
    EXPECT_THROW(ternarize(w, 1, 1, 0.0), ValidationError);
    EXPECT_THROW(ternarize(w, 1, 2), DimensionMismatchError);
    const std::vector<float> bad{NAN};
    EXPECT_THROW(ternarize(bad, 1, 1), QuantizationError);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "ternpack/packed_linear.hpp"
#include "test_support.hpp"

using namespace ternpack;
using ternpack::testing::random_ternary;
using ternpack::testing::random_uniform;

namespace {

const BlockFormat kFormats[] = {BlockFormat::TQ2, BlockFormat::TQ1};

// Literal add / subtract / skip kernel; the production kernel must match it
// bit for bit.
std::vector<float> add_sub_skip_gemv(const PackedMatrix& w, const std::vector<float>& x) {
    const std::vector<float> dense = dequantize(w);
    std::vector<float> y(w.rows());
    for (std::size_t r = 0; r < w.rows(); ++r) {
        float acc = 0.0f;
        for (std::size_t b = 0; b < w.blocks_per_row(); ++b) {
            const auto bytes = w.block_bytes_at(r, b);
            const std::size_t payload = w.format() == BlockFormat::TQ2 ? 64 : 52;
            const float scale = fp16_to_fp32(static_cast<std::uint16_t>(bytes[payload] | (bytes[payload + 1] << 8)));
            float sum = 0.0f;
            for (std::size_t c = b * kBlockSize; c < std::min(w.cols(), (b + 1) * kBlockSize); ++c) {
                const float v = dense[r * w.cols() + c];
                if (v > 0) sum += x[c];
                else if (v < 0) sum -= x[c];
            }
            acc += scale * sum;
        }
        y[r] = acc;
    }
    return y;
}

} // namespace

TEST(PackMatrixTest, Blocking) {
    std::mt19937_64 rng(1);
    for (auto f : kFormats) {
        const auto one = pack_matrix(random_uniform(256, rng), 1, 256, f);
        EXPECT_EQ(one.blocks_per_row(), 1u);
        EXPECT_EQ(one.weight_bytes(), block_bytes(f));

        const auto w = random_uniform(600, rng);
        const auto m = pack_matrix(w, 2, 300, f);
        EXPECT_EQ(m.blocks_per_row(), 2u);
        EXPECT_EQ(m.weight_bytes(), 2 * 2 * block_bytes(f));
        // second block: 44 real values, 212 zero pads
        const auto dense = dequantize(m);
        EXPECT_EQ(dense.size(), 600u);
        std::array<float, kBlockSize> tail{};
        std::copy(w.begin() + 256, w.begin() + 300, tail.begin());
        const auto expected = f == BlockFormat::TQ2
                                  ? m.block_bytes_at(0, 1)[0] == quantize_block_tq2(tail).qs[0]
                                  : m.block_bytes_at(0, 1)[0] == quantize_block_tq1(tail).qs[0];
        EXPECT_TRUE(expected);
    }
    const auto big = pack_matrix(std::vector<float>(512 * 2048, 0.5f), 512, 2048, BlockFormat::TQ2);
    EXPECT_EQ(big.weight_bytes(), 512u * 8 * 66);
}

TEST(PackMatrixTest, RowsMatchBlockQuantizer) {
    std::mt19937_64 rng(2);
    const auto w = random_uniform(3 * 512, rng, -4.0f, 4.0f);
    const auto m = pack_matrix(w, 3, 512, BlockFormat::TQ2);
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t b = 0; b < 2; ++b) {
            BlockValues v{};
            std::copy_n(w.begin() + static_cast<std::ptrdiff_t>(r * 512 + b * 256), 256, v.begin());
            std::array<std::uint8_t, 66> expected{};
            quantize_block_tq2(v).write_to(expected);
            const auto got = m.block_bytes_at(r, b);
            ASSERT_TRUE(std::equal(got.begin(), got.end(), expected.begin()));
        }
    }
}

TEST(PackMatrixTest, ConstructorChecksSize) {
    EXPECT_THROW(PackedMatrix(2, 300, BlockFormat::TQ2, std::vector<std::uint8_t>(100)), SizeMismatchError);
    EXPECT_NO_THROW(PackedMatrix(2, 300, BlockFormat::TQ1, std::vector<std::uint8_t>(4 * 54)));
    EXPECT_THROW(pack_matrix(std::vector<float>(5), 2, 3, BlockFormat::TQ2), DimensionMismatchError);
}

TEST(GemvTest, HandExample) {
    // [[1,-1],[1,0]] at scale 1, x = (2,3)
    const std::vector<float> w{1.0f, -1.0f, 1.0f, 0.0f};
    const std::vector<float> x{2.0f, 3.0f};
    for (auto f : kFormats) {
        const auto m = pack_matrix(w, 2, 2, f);
        EXPECT_EQ(gemv(m, x), (std::vector<float>{-1.0f, 2.0f}));
        EXPECT_EQ(gemv_reference(m, x), (std::vector<double>{-1.0, 2.0}));
    }
}

TEST(GemvTest, ZeroMatrix) {
    std::mt19937_64 rng(3);
    for (auto f : kFormats) {
        const auto m = pack_matrix(std::vector<float>(5 * 700, 0.0f), 5, 700, f);
        const auto x = random_uniform(700, rng);
        for (float y : gemv(m, x)) EXPECT_EQ(y, 0.0f);
        for (double y : gemv_reference(m, x)) EXPECT_EQ(y, 0.0);
    }
}

TEST(GemvTest, ReferenceClosedForm) {
    const float s = 0.375f;
    const auto m = pack_matrix(std::vector<float>(256, s), 1, 256, BlockFormat::TQ2);
    EXPECT_EQ(gemv_reference(m, std::vector<float>(256, 1.0f))[0], 256.0 * s);
    EXPECT_EQ(gemv(m, std::vector<float>(256, 1.0f))[0], 256.0f * s);
}

TEST(GemvTest, MatchesReferenceOnRandomTernary) {
    std::mt19937_64 rng(4);
    for (auto f : kFormats) {
        const auto m = pack_matrix(random_ternary(512, 2048, rng), 512, 2048, f);
        for (int i = 0; i < 5; ++i) {
            const auto x = random_uniform(2048, rng);
            EXPECT_LE(max_relative_error(gemv(m, x), gemv_reference(m, x)), 1e-4);
        }
    }
}

TEST(GemvTest, MatchesReferenceOnRealWeights) {
    std::mt19937_64 rng(5);
    for (auto f : kFormats) {
        const auto m = pack_matrix(random_uniform(64 * 1000, rng, -3.0f, 3.0f), 64, 1000, f);
        const auto x = random_uniform(1000, rng);
        EXPECT_LE(max_relative_error(gemv(m, x), gemv_reference(m, x)), 1e-4);
    }
}

TEST(GemvTest, BitwiseEqualToAddSubtractSkip) {
    std::mt19937_64 rng(6);
    for (auto f : kFormats) {
        const auto m = pack_matrix(random_uniform(33 * 777, rng, -2.0f, 2.0f), 33, 777, f);
        const auto x = random_uniform(777, rng, -10.0f, 10.0f);
        EXPECT_EQ(gemv(m, x), add_sub_skip_gemv(m, x));
    }
}

TEST(GemvTest, DeterministicAcrossThreadCounts) {
    std::mt19937_64 rng(7);
    for (auto f : kFormats) {
        const auto m = pack_matrix(random_uniform(257 * 600, rng), 257, 600, f);
        const auto x = random_uniform(600, rng);
        const auto y1 = gemv(m, x, 1);
        EXPECT_EQ(gemv(m, x, 2), y1);
        EXPECT_EQ(gemv(m, x, 8), y1);
        EXPECT_EQ(gemv(m, x, 0), y1);
    }
}

TEST(GemvTest, Linearity) {
    std::mt19937_64 rng(8);
    for (auto f : kFormats) {
        const auto m = pack_matrix(random_ternary(128, 1024, rng, 0.5f), 128, 1024, f);
        for (int iter = 0; iter < 20; ++iter) {
            const auto x = random_uniform(1024, rng);
            const auto z = random_uniform(1024, rng);
            const float a = 0.75f, b = -1.25f;
            std::vector<float> comb(1024);
            for (std::size_t i = 0; i < comb.size(); ++i) comb[i] = a * x[i] + b * z[i];
            const auto yc = gemv(m, comb);
            const auto yx = gemv(m, x);
            const auto yz = gemv(m, z);
            std::vector<double> expected(yc.size());
            double norm = 0.0;
            for (std::size_t i = 0; i < yc.size(); ++i) {
                expected[i] = a * static_cast<double>(yx[i]) + b * static_cast<double>(yz[i]);
                norm = std::max(norm, std::fabs(expected[i]));
            }
            double diff = 0.0;
            for (std::size_t i = 0; i < yc.size(); ++i) diff = std::max(diff, std::fabs(yc[i] - expected[i]));
            ASSERT_LE(diff / norm, 1e-5);
        }
    }
}

TEST(GemvTest, PaddingNeutrality) {
    std::mt19937_64 rng(9);
    for (auto f : kFormats) {
        for (std::size_t extra : {1u, 100u, 212u, 500u}) {
            const std::size_t rows = 7, cols = 300;
            const auto w = random_uniform(rows * cols, rng);
            std::vector<float> wide(rows * (cols + extra), 0.0f);
            for (std::size_t r = 0; r < rows; ++r)
                std::copy_n(w.begin() + static_cast<std::ptrdiff_t>(r * cols), cols,
                            wide.begin() + static_cast<std::ptrdiff_t>(r * (cols + extra)));
            const auto x = random_uniform(cols, rng);
            auto x_wide = x;
            const auto junk = random_uniform(extra, rng, -5.0f, 5.0f);
            x_wide.insert(x_wide.end(), junk.begin(), junk.end());
            EXPECT_EQ(gemv(pack_matrix(w, rows, cols, f), x), gemv(pack_matrix(wide, rows, cols + extra, f), x_wide));
        }
    }
}

TEST(GemvTest, ByteTraffic) {
    for (auto [rows, cols] : std::vector<std::pair<std::size_t, std::size_t>>{{1, 1}, {3, 255}, {4, 257}, {16, 4096}}) {
        for (auto f : kFormats) {
            const auto m = pack_matrix(std::vector<float>(rows * cols, 1.0f), rows, cols, f);
            EXPECT_EQ(m.weight_bytes(), rows * ((cols + 255) / 256) * (f == BlockFormat::TQ2 ? 66u : 54u));
        }
    }
}

TEST(GemvTest, DimensionMismatch) {
    const auto m = pack_matrix(std::vector<float>(10, 1.0f), 2, 5, BlockFormat::TQ2);
    EXPECT_THROW(gemv(m, std::vector<float>(4)), DimensionMismatchError);
    EXPECT_THROW(gemv_reference(m, std::vector<float>(6)), DimensionMismatchError);
    EXPECT_THROW(gemm(m, std::vector<float>(9), 2), DimensionMismatchError);
}

TEST(GemmTest, BatchOfOneIsGemv) {
    std::mt19937_64 rng(10);
    const auto m = pack_matrix(random_uniform(40 * 300, rng), 40, 300, BlockFormat::TQ1);
    const auto x = random_uniform(300, rng);
    EXPECT_EQ(gemm(m, x, 1), gemv(m, x));
}

TEST(GemmTest, BasisVectorsRecoverColumns) {
    std::mt19937_64 rng(11);
    const std::size_t rows = 9, cols = 270;
    for (auto f : kFormats) {
        const auto m = pack_matrix(random_uniform(rows * cols, rng), rows, cols, f);
        std::vector<float> basis(cols * cols, 0.0f);
        for (std::size_t t = 0; t < cols; ++t) basis[t * cols + t] = 1.0f;
        const auto y = gemm(m, basis, cols);
        const auto dense = dequantize(m);
        for (std::size_t t = 0; t < cols; ++t)
            for (std::size_t r = 0; r < rows; ++r) ASSERT_EQ(y[t * rows + r], dense[r * cols + t]);
    }
}

TEST(GemmTest, RandomBatchAgainstOracleAndColumnwiseGemv) {
    std::mt19937_64 rng(12);
    const std::size_t rows = 300, cols = 1024, batch = 16;
    for (auto f : kFormats) {
        const auto m = pack_matrix(random_ternary(rows, cols, rng), rows, cols, f);
        const auto x = random_uniform(batch * cols, rng);
        const auto y = gemm(m, x, batch, 3);
        EXPECT_LE(max_relative_error(y, gemm_reference(m, x, batch)), 1e-4);
        for (std::size_t j = 0; j < batch; ++j) {
            const auto col = gemv(m, std::span<const float>(x).subspan(j * cols, cols));
            ASSERT_TRUE(std::equal(col.begin(), col.end(), y.begin() + static_cast<std::ptrdiff_t>(j * rows)));
        }
        // permuting the batch permutes the outputs, bit for bit
        std::vector<std::size_t> perm(batch);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<float> xp(x.size());
        for (std::size_t j = 0; j < batch; ++j)
            std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(perm[j] * cols), cols, xp.begin() + static_cast<std::ptrdiff_t>(j * cols));
        const auto yp = gemm(m, xp, batch);
        for (std::size_t j = 0; j < batch; ++j)
            ASSERT_TRUE(std::equal(yp.begin() + static_cast<std::ptrdiff_t>(j * rows), yp.begin() + static_cast<std::ptrdiff_t>((j + 1) * rows),
                                   y.begin() + static_cast<std::ptrdiff_t>(perm[j] * rows)));
    }
}

TEST(GemmTest, EmptyBatch) {
    const auto m = pack_matrix(std::vector<float>(10, 1.0f), 2, 5, BlockFormat::TQ2);
    EXPECT_TRUE(gemm(m, {}, 0).empty());
}

TEST(PackTernarizedTest, ScaleIsGammaAndProductMatchesReconstruction) {
    std::mt19937_64 rng(13);
    const std::size_t rows = 16, cols = 512;
    const auto w = random_uniform(rows * cols, rng, -0.1f, 0.1f);
    const auto t = ternarize(w, rows, cols);
    const auto m = pack_ternarized(t, BlockFormat::TQ2);
    const float g16 = round_to_fp16(static_cast<float>(t.gamma));
    const auto dense = dequantize(m);
    for (std::size_t i = 0; i < dense.size(); ++i) ASSERT_EQ(dense[i], g16 * t.trits[i]);
}

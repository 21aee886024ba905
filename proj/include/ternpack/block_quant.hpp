#pragma once

// Blockwise ternary quantization with absmax scales.
//
// A block is 256 consecutive weights sharing one binary16 scale (the block
// absmax). Each weight becomes digit = round(x / scale) + 1 in {0,1,2}.
//
//   TQ2: 64 payload bytes, four base-4 digits per byte   -> 66 bytes/block
//   TQ1: 52 payload bytes, five base-3 digits per byte   -> 54 bytes/block
//        (51 full codes plus one code holding the last weight and 4 pads)
//
// Serialized layout: payload bytes in element order, then the scale as
// little-endian binary16.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ternpack/error.hpp"
#include "ternpack/half.hpp"
#include "ternpack/trit_codec.hpp"

namespace ternpack {

inline constexpr std::size_t kBlockSize = 256;

enum class BlockFormat : std::uint8_t { TQ2, TQ1 };

inline std::string to_string(BlockFormat f) { return f == BlockFormat::TQ2 ? "tq2" : "tq1"; }

using BlockDigits = std::array<std::uint8_t, kBlockSize>;
using BlockValues = std::array<float, kBlockSize>;

namespace detail {

inline float block_absmax(std::span<const float, kBlockSize> values) {
    float amax = 0.0f;
    for (std::size_t i = 0; i < kBlockSize; ++i) {
        const float v = values[i];
        if (!std::isfinite(v)) {
            throw QuantizationError("non-finite value at block offset " + std::to_string(i));
        }
        amax = std::max(amax, std::fabs(v));
    }
    return amax;
}

// Returns the stored binary16 scale bits and fills digits in {0,1,2}.
// Digits are computed against the stored (rounded) scale with
// round-half-away-from-zero, clamped to one step.
inline std::uint16_t quantize_digits(std::span<const float, kBlockSize> values, BlockDigits& digits) {
    const float amax = block_absmax(values);
    const std::uint16_t scale_bits = fp32_to_fp16(amax);
    const float scale = fp16_to_fp32(scale_bits);
    if (!std::isfinite(scale)) {
        throw QuantizationError("block absmax " + std::to_string(amax) + " overflows binary16");
    }
    if (scale == 0.0f) {
        digits.fill(1);
        return fp32_to_fp16(0.0f);
    }
    const double s = static_cast<double>(scale);
    for (std::size_t i = 0; i < kBlockSize; ++i) {
        // Double division is exact at ties (x == s/2) and cannot cross one
        // otherwise: float/binary16 quotients sit >= 2^-25 away from 0.5.
        const double q = std::clamp(std::round(static_cast<double>(values[i]) / s), -1.0, 1.0);
        digits[i] = static_cast<std::uint8_t>(static_cast<int>(q) + 1);
    }
    return scale_bits;
}

inline void write_scale(std::uint16_t bits, std::uint8_t* dst) {
    dst[0] = static_cast<std::uint8_t>(bits & 0xffu);
    dst[1] = static_cast<std::uint8_t>(bits >> 8);
}

inline std::uint16_t read_scale(const std::uint8_t* src) {
    return static_cast<std::uint16_t>(src[0] | (src[1] << 8));
}

} // namespace detail

struct TQ2Block {
    static constexpr BlockFormat kFormat = BlockFormat::TQ2;
    static constexpr std::size_t kPayloadBytes = kBlockSize / 4;
    static constexpr std::size_t kBytes = kPayloadBytes + 2;

    std::array<std::uint8_t, kPayloadBytes> qs{};
    std::uint16_t scale = 0; // binary16 bits

    float scale_f32() const { return fp16_to_fp32(scale); }

    static void digits_from_payload(const std::uint8_t* qs, BlockDigits& digits) noexcept {
        for (std::size_t b = 0; b < kPayloadBytes; ++b) {
            const std::uint8_t byte = qs[b];
            digits[4 * b + 0] = byte & 0x3u;
            digits[4 * b + 1] = (byte >> 2) & 0x3u;
            digits[4 * b + 2] = (byte >> 4) & 0x3u;
            digits[4 * b + 3] = (byte >> 6) & 0x3u;
        }
    }

    BlockDigits digits() const noexcept {
        BlockDigits d{};
        digits_from_payload(qs.data(), d);
        return d;
    }

    void write_to(std::span<std::uint8_t, kBytes> out) const {
        std::copy(qs.begin(), qs.end(), out.begin());
        detail::write_scale(scale, out.data() + kPayloadBytes);
    }

    static TQ2Block read_from(std::span<const std::uint8_t, kBytes> in) {
        TQ2Block b;
        std::copy_n(in.begin(), kPayloadBytes, b.qs.begin());
        b.scale = detail::read_scale(in.data() + kPayloadBytes);
        return b;
    }

    friend bool operator==(const TQ2Block&, const TQ2Block&) = default;
};

struct TQ1Block {
    static constexpr BlockFormat kFormat = BlockFormat::TQ1;
    static constexpr std::size_t kTritsPerCode = 5;
    static constexpr std::size_t kFullCodes = kBlockSize / kTritsPerCode; // 51
    static constexpr std::size_t kPayloadBytes = kFullCodes + 1;          // 52
    static constexpr std::size_t kBytes = kPayloadBytes + 2;

    std::array<std::uint8_t, kPayloadBytes> qs{};
    std::uint16_t scale = 0;

    float scale_f32() const { return fp16_to_fp32(scale); }

    // Uses the multiply-by-3 extraction; tail code contributes its first digit.
    static void digits_from_payload(const std::uint8_t* qs, BlockDigits& digits) noexcept {
        for (std::size_t c = 0; c < kFullCodes; ++c) {
            const auto d = extract_digits_mul(qs[c]);
            std::copy(d.begin(), d.end(), digits.begin() + static_cast<std::ptrdiff_t>(c * kTritsPerCode));
        }
        digits[kBlockSize - 1] = extract_digits_mul(qs[kFullCodes])[0];
    }

    BlockDigits digits() const noexcept {
        BlockDigits d{};
        digits_from_payload(qs.data(), d);
        return d;
    }

    void write_to(std::span<std::uint8_t, kBytes> out) const {
        std::copy(qs.begin(), qs.end(), out.begin());
        detail::write_scale(scale, out.data() + kPayloadBytes);
    }

    static TQ1Block read_from(std::span<const std::uint8_t, kBytes> in) {
        TQ1Block b;
        std::copy_n(in.begin(), kPayloadBytes, b.qs.begin());
        b.scale = detail::read_scale(in.data() + kPayloadBytes);
        return b;
    }

    friend bool operator==(const TQ1Block&, const TQ1Block&) = default;
};

inline constexpr std::size_t block_bytes(BlockFormat f) noexcept {
    return f == BlockFormat::TQ2 ? TQ2Block::kBytes : TQ1Block::kBytes;
}

/// Stored bits per weight for a 256-multiple tensor.
inline constexpr double bits_per_weight(BlockFormat f) noexcept {
    return static_cast<double>(block_bytes(f)) * 8.0 / static_cast<double>(kBlockSize);
}

inline TQ2Block quantize_block_tq2(std::span<const float, kBlockSize> values) {
    BlockDigits digits{};
    TQ2Block block;
    block.scale = detail::quantize_digits(values, digits);
    for (std::size_t b = 0; b < TQ2Block::kPayloadBytes; ++b) {
        block.qs[b] = static_cast<std::uint8_t>(digits[4 * b] | (digits[4 * b + 1] << 2) |
                                                (digits[4 * b + 2] << 4) | (digits[4 * b + 3] << 6));
    }
    return block;
}

inline TQ1Block quantize_block_tq1(std::span<const float, kBlockSize> values) {
    BlockDigits digits{};
    TQ1Block block;
    block.scale = detail::quantize_digits(values, digits);
    std::array<Trit, TQ1Block::kTritsPerCode> group{};
    for (std::size_t c = 0; c < TQ1Block::kPayloadBytes; ++c) {
        const std::size_t begin = c * TQ1Block::kTritsPerCode;
        const std::size_t len = std::min(TQ1Block::kTritsPerCode, kBlockSize - begin);
        for (std::size_t j = 0; j < len; ++j) {
            group[j] = static_cast<Trit>(digits[begin + j] - 1);
        }
        block.qs[c] = static_cast<std::uint8_t>(
            encode_trit_block(std::span<const Trit>(group.data(), len), kFiveTritsPerByte).code);
    }
    return block;
}

template <class Block>
BlockValues dequantize_block(const Block& block) {
    const float scale = block.scale_f32();
    const BlockDigits digits = block.digits();
    BlockValues out{};
    for (std::size_t i = 0; i < kBlockSize; ++i) {
        out[i] = scale * static_cast<float>(static_cast<int>(digits[i]) - 1);
    }
    return out;
}

inline BlockValues dequantize_block_tq2(const TQ2Block& block) { return dequantize_block(block); }
inline BlockValues dequantize_block_tq1(const TQ1Block& block) { return dequantize_block(block); }

// --- whole-matrix ternarization ---------------------------------------------

inline constexpr double kDefaultTernarizeEpsilon = 1e-5;

/// One shared scale for a whole matrix plus its trits, row-major.
struct TernarizeResult {
    std::size_t rows = 0;
    std::size_t cols = 0;
    double gamma = 0.0;
    TritSequence trits;

    /// gamma * trit, row-major.
    std::vector<double> reconstruct() const {
        std::vector<double> out(trits.size());
        for (std::size_t i = 0; i < trits.size(); ++i) {
            out[i] = gamma * static_cast<double>(trits[i]);
        }
        return out;
    }
};

/// gamma = eps + mean |W|; trit = round(clamp(W / gamma, -1, 1)).
inline TernarizeResult ternarize(std::span<const float> weights, std::size_t rows, std::size_t cols,
                                 double epsilon = kDefaultTernarizeEpsilon) {
    if (rows == 0 || cols == 0) {
        throw ValidationError("ternarize: empty matrix");
    }
    if (weights.size() != rows * cols) {
        throw DimensionMismatchError("ternarize: expected " + std::to_string(rows * cols) +
                                     " values, got " + std::to_string(weights.size()));
    }
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
        throw ValidationError("ternarize: epsilon must be positive and finite");
    }
    double abs_sum = 0.0;
    for (const float w : weights) {
        if (!std::isfinite(w)) {
            throw QuantizationError("ternarize: non-finite weight");
        }
        abs_sum += std::fabs(static_cast<double>(w));
    }
    TernarizeResult result;
    result.rows = rows;
    result.cols = cols;
    result.gamma = epsilon + abs_sum / static_cast<double>(weights.size());
    result.trits.resize(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double q = std::round(std::clamp(static_cast<double>(weights[i]) / result.gamma, -1.0, 1.0));
        result.trits[i] = static_cast<Trit>(q);
    }
    return result;
}

} // namespace ternpack

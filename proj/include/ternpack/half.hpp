#pragma once

#include <bit>
#include <cstdint>

namespace ternpack {

// IEEE 754 binary16 <-> binary32, round-to-nearest-even. Handles
// subnormals, infinities and NaN (quieted, payload truncated).

inline std::uint16_t fp32_to_fp16(float value) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
    const std::uint32_t sign = (bits >> 16) & 0x8000u;
    const std::uint32_t abs = bits & 0x7fffffffu;

    if (abs >= 0x7f800000u) {
        if (abs > 0x7f800000u) {
            return static_cast<std::uint16_t>(sign | 0x7e00u | ((abs >> 13) & 0x3ffu));
        }
        return static_cast<std::uint16_t>(sign | 0x7c00u);
    }
    // 65520 and above round to infinity.
    if (abs >= 0x477ff000u) {
        return static_cast<std::uint16_t>(sign | 0x7c00u);
    }
    if (abs >= 0x38800000u) {
        // normal half: rebias exponent (127 -> 15), drop 13 mantissa bits
        std::uint32_t h = (abs - 0x38000000u) >> 13;
        const std::uint32_t rem = abs & 0x1fffu;
        if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) {
            ++h;
        }
        return static_cast<std::uint16_t>(sign | h);
    }
    if (abs < 0x33000000u) {
        // below half the smallest subnormal (2^-25): rounds to zero
        return static_cast<std::uint16_t>(sign);
    }
    // subnormal half
    const std::uint32_t exp = abs >> 23;
    const std::uint32_t mant = (abs & 0x7fffffu) | 0x800000u;
    const std::uint32_t shift = 126u - exp; // in [14, 24]
    std::uint32_t h = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1u);
    const std::uint32_t half = 1u << (shift - 1u);
    if (rem > half || (rem == half && (h & 1u))) {
        ++h;
    }
    return static_cast<std::uint16_t>(sign | h);
}

inline float fp16_to_fp32(std::uint16_t half) {
    const std::uint32_t sign = static_cast<std::uint32_t>(half & 0x8000u) << 16;
    const std::uint32_t exp = (half >> 10) & 0x1fu;
    std::uint32_t mant = half & 0x3ffu;

    std::uint32_t bits;
    if (exp == 0x1fu) {
        bits = sign | 0x7f800000u | (mant << 13);
    } else if (exp != 0) {
        bits = sign | ((exp + 112u) << 23) | (mant << 13);
    } else if (mant == 0) {
        bits = sign;
    } else {
        // subnormal: normalize
        std::uint32_t e = 113u;
        while ((mant & 0x400u) == 0) {
            mant <<= 1;
            --e;
        }
        bits = sign | (e << 23) | ((mant & 0x3ffu) << 13);
    }
    return std::bit_cast<float>(bits);
}

/// Rounds through binary16 and back.
inline float round_to_fp16(float value) { return fp16_to_fp32(fp32_to_fp16(value)); }

} // namespace ternpack

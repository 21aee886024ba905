#pragma once

// Lossless packing of ternary sequences {-1, 0, 1}.
//
// Two schemes:
//   base-4: each trit is shifted to a digit in {0,1,2} and stored in 2 bits,
//           four digits per byte, first digit in the low bits.
//   base-3: k digits form a base-3 integer N (first digit most significant)
//           which is rescaled into a p-bit code
//               code = floor((N * 2^p + 3^k - 1) / 3^k)
//           and recovered with
//               N = floor((code * 3^k - (3^k - 1) + 2^p - 1) / 2^p).
//           Lossless exactly when 2^p > 3^k.
//
// Short groups are padded with trit 0 (digit 1) in both schemes.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ternpack/error.hpp"

namespace ternpack {

using Trit = std::int8_t;
using TritSequence = std::vector<Trit>;

inline constexpr bool is_trit(int v) noexcept { return v >= -1 && v <= 1; }

inline void require_trits(std::span<const Trit> trits) {
    for (std::size_t i = 0; i < trits.size(); ++i) {
        if (!is_trit(trits[i])) {
            throw ValidationError("value at index " + std::to_string(i) + " is not a trit: " +
                                  std::to_string(static_cast<int>(trits[i])));
        }
    }
}

// --- base-4 -----------------------------------------------------------------

inline constexpr std::size_t kTritsPerByte = 4;

inline constexpr std::size_t base4_bytes_for(std::size_t n) noexcept {
    return (n + kTritsPerByte - 1) / kTritsPerByte;
}

/// Packs trits four per byte into `out`, which must hold base4_bytes_for(n)
/// bytes. Trit i lands in byte i/4 at bit offset 2*(i%4).
inline void pack_base4(std::span<const Trit> trits, std::span<std::uint8_t> out) {
    if (out.size() < base4_bytes_for(trits.size())) {
        throw ValidationError("pack_base4: output buffer too small");
    }
    const std::size_t full = trits.size() / kTritsPerByte;
    for (std::size_t b = 0; b < full; ++b) {
        const Trit* t = trits.data() + b * kTritsPerByte;
        out[b] = static_cast<std::uint8_t>((t[0] + 1) | ((t[1] + 1) << 2) | ((t[2] + 1) << 4) |
                                           ((t[3] + 1) << 6));
    }
    if (const std::size_t rest = trits.size() % kTritsPerByte; rest != 0) {
        std::uint8_t byte = 0x55; // four pad digits of value 1
        for (std::size_t j = 0; j < rest; ++j) {
            const unsigned digit = static_cast<unsigned>(trits[full * kTritsPerByte + j] + 1);
            byte = static_cast<std::uint8_t>((byte & ~(0x3u << (2 * j))) | (digit << (2 * j)));
        }
        out[full] = byte;
    }
}

inline std::vector<std::uint8_t> pack_base4(std::span<const Trit> trits) {
    require_trits(trits);
    std::vector<std::uint8_t> out(base4_bytes_for(trits.size()));
    pack_base4(trits, std::span<std::uint8_t>(out));
    return out;
}

/// Digit (0..3) at position j (0..3) of a base-4 byte.
inline constexpr unsigned base4_digit(std::uint8_t byte, unsigned j) noexcept {
    return (byte >> (2 * j)) & 0x03u;
}

/// Unpacks exactly n trits. A 2-bit field holding 3 (never produced by the
/// packer) decodes to trit 2, so callers that accept foreign bytes must
/// check legality themselves.
inline TritSequence unpack_base4(std::span<const std::uint8_t> bytes, std::size_t n) {
    if (bytes.size() < base4_bytes_for(n)) {
        throw DecodeUnderrunError("unpack_base4: " + std::to_string(bytes.size()) +
                                  " bytes cannot hold " + std::to_string(n) + " trits");
    }
    TritSequence out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = static_cast<Trit>(
            static_cast<int>(base4_digit(bytes[i / kTritsPerByte], i % kTritsPerByte)) - 1);
    }
    return out;
}

// --- base-3 -----------------------------------------------------------------

inline constexpr unsigned kMaxTritsPerCode = 40; // 3^40 < 2^64

inline constexpr std::uint64_t pow3(unsigned k) noexcept {
    std::uint64_t r = 1;
    for (unsigned i = 0; i < k; ++i) {
        r *= 3;
    }
    return r;
}

/// Block parameters for the base-3 scheme: k trits per p-bit code.
class CodecParams {
public:
    /// Throws CapacityError unless 2^p > 3^k, k in [1, 40] and p <= 64.
    CodecParams(unsigned k, unsigned p) : k_(k), p_(p) {
        if (k == 0 || k > kMaxTritsPerCode) {
            throw CapacityError("trits per code must be in [1, 40], got " + std::to_string(k));
        }
        if (p == 0 || p > 64) {
            throw CapacityError("bits per code must be in [1, 64], got " + std::to_string(p));
        }
        if (!satisfies_capacity(k, p)) {
            throw CapacityError("2^" + std::to_string(p) + " must exceed 3^" + std::to_string(k));
        }
    }

    static constexpr bool satisfies_capacity(unsigned k, unsigned p) noexcept {
        if (k == 0 || k > kMaxTritsPerCode || p == 0) {
            return false;
        }
        if (p >= 64) {
            return true;
        }
        return (std::uint64_t{1} << p) > pow3(k);
    }

    unsigned k() const noexcept { return k_; }
    unsigned p() const noexcept { return p_; }

private:
    unsigned k_;
    unsigned p_;
};

/// The 1.6-bit configuration: five trits per byte.
inline const CodecParams kFiveTritsPerByte{5, 8};

struct PackedCode {
    std::uint64_t code = 0;
    unsigned trit_count = 0;

    friend bool operator==(const PackedCode&, const PackedCode&) = default;
};

namespace detail {

inline unsigned __int128 pow2_wide(unsigned p) { return static_cast<unsigned __int128>(1) << p; }

// The formulas without any capacity check; used by brute-force tests of
// undersized configurations too.
inline std::uint64_t encode_digits_unchecked(std::uint64_t block_value, unsigned k, unsigned p) {
    const std::uint64_t three_k = pow3(k);
    const unsigned __int128 num = static_cast<unsigned __int128>(block_value) * pow2_wide(p) + (three_k - 1);
    // The code lives in a p-bit field. Truncation only matters when 3^k > 2^p.
    return static_cast<std::uint64_t>((num / three_k) & (pow2_wide(p) - 1));
}

inline std::uint64_t decode_value_unchecked(std::uint64_t code, unsigned k, unsigned p) {
    const std::uint64_t three_k = pow3(k);
    const unsigned __int128 num = static_cast<unsigned __int128>(code) * three_k + (pow2_wide(p) - 1);
    if (num < three_k - 1) {
        return 0; // only reachable when 2^p <= 3^k
    }
    return static_cast<std::uint64_t>((num - (three_k - 1)) >> p);
}

} // namespace detail

/// Encodes up to k trits into one code. Missing trailing trits are padded
/// with 0.
inline PackedCode encode_trit_block(std::span<const Trit> trits, const CodecParams& params) {
    if (trits.size() > params.k()) {
        throw ValidationError("encode_trit_block: " + std::to_string(trits.size()) +
                              " trits exceed block size " + std::to_string(params.k()));
    }
    require_trits(trits);
    std::uint64_t value = 0;
    for (unsigned j = 0; j < params.k(); ++j) {
        const std::uint64_t digit = j < trits.size() ? static_cast<std::uint64_t>(trits[j] + 1) : 1u;
        value = value * 3 + digit;
    }
    return PackedCode{detail::encode_digits_unchecked(value, params.k(), params.p()),
                      static_cast<unsigned>(trits.size())};
}

/// Division/modulo decoder. Total over all codes < 2^p; only codes produced
/// by encode_trit_block are guaranteed to round-trip. Returns k trits, or
/// code.trit_count of them when that is nonzero.
inline TritSequence decode_trit_block_canonical(const PackedCode& code, const CodecParams& params) {
    const unsigned k = params.k();
    std::uint64_t value = detail::decode_value_unchecked(code.code, k, params.p());
    TritSequence digits(k);
    for (unsigned j = k; j-- > 0;) {
        digits[j] = static_cast<Trit>(static_cast<int>(value % 3) - 1);
        value /= 3;
    }
    if (code.trit_count != 0 && code.trit_count < k) {
        digits.resize(code.trit_count);
    }
    return digits;
}

/// Fixed-point digit extraction for five trits in a byte: multiply by 3,
/// take the high byte as the digit, keep the low byte. No division.
/// Returns digits in {0,1,2}, most significant first.
inline constexpr std::array<std::uint8_t, 5> extract_digits_mul(std::uint8_t code) noexcept {
    std::array<std::uint8_t, 5> digits{};
    std::uint32_t b = code;
    for (auto& d : digits) {
        const std::uint32_t t = b * 3u;
        d = static_cast<std::uint8_t>(t >> 8);
        b = t & 0xffu;
    }
    return digits;
}

/// Trit form of extract_digits_mul. Total over all 256 bytes (the high byte
/// of b*3 is at most 2); matches the canonical decoder on canonical codes.
inline std::array<Trit, 5> decode_trit_block_mul(std::uint8_t code) noexcept {
    const auto digits = extract_digits_mul(code);
    std::array<Trit, 5> out{};
    for (std::size_t i = 0; i < 5; ++i) {
        out[i] = static_cast<Trit>(static_cast<int>(digits[i]) - 1);
    }
    return out;
}

/// Packs a whole sequence into codes of params.p() bits each, one per
/// group of k trits. Codes are returned as 64-bit words.
inline std::vector<std::uint64_t> pack_base3(std::span<const Trit> trits, const CodecParams& params) {
    const std::size_t k = params.k();
    std::vector<std::uint64_t> codes;
    codes.reserve((trits.size() + k - 1) / k);
    for (std::size_t i = 0; i < trits.size(); i += k) {
        const std::size_t len = std::min(k, trits.size() - i);
        codes.push_back(encode_trit_block(trits.subspan(i, len), params).code);
    }
    return codes;
}

inline TritSequence unpack_base3(std::span<const std::uint64_t> codes, std::size_t n,
                                 const CodecParams& params) {
    const std::size_t k = params.k();
    if (codes.size() * k < n) {
        throw DecodeUnderrunError("unpack_base3: " + std::to_string(codes.size()) +
                                  " codes cannot hold " + std::to_string(n) + " trits");
    }
    TritSequence out;
    out.reserve(n);
    for (std::size_t c = 0; c < codes.size() && out.size() < n; ++c) {
        const auto digits = decode_trit_block_canonical(PackedCode{codes[c], 0}, params);
        for (std::size_t j = 0; j < k && out.size() < n; ++j) {
            out.push_back(digits[j]);
        }
    }
    return out;
}

/// p / k.
inline double bits_per_trit(const CodecParams& params) noexcept {
    return static_cast<double>(params.p()) / static_cast<double>(params.k());
}

inline constexpr double kLog2Of3 = 1.5849625007211562;

} // namespace ternpack

#pragma once

// Storage and memory-bound arithmetic for packed weights.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ternpack/container.hpp"
#include "ternpack/error.hpp"

namespace ternpack {

/// Total data bytes for a set of tensors stored as `dtype`.
inline std::uint64_t footprint(std::span<const std::vector<std::uint64_t>> shapes, DType dtype) {
    std::uint64_t total = 0;
    for (const auto& dims : shapes) {
        total += expected_data_len(dtype, dims);
    }
    return total;
}

/// Stored bits per weight for a last dimension that is a multiple of 256.
inline double storage_bits_per_weight(DType dtype) {
    switch (dtype) {
    case DType::F32: return 32.0;
    case DType::F16: return 16.0;
    case DType::TQ2:
    case DType::TQ1: return bits_per_weight(block_format(dtype));
    }
    throw ValidationError("unknown dtype");
}

/// Batch size below which a mixed-precision matmul is memory-bound:
/// one weight load of bits/8 bytes buys R * bits/8 FLOPs, and each token
/// spends 2 FLOPs per weight.
inline std::uint64_t critical_batch(double flops_per_byte, double bits_per_weight) {
    if (!(flops_per_byte >= 0.0) || !std::isfinite(flops_per_byte)) {
        throw ValidationError("flops per byte must be finite and non-negative");
    }
    if (!(bits_per_weight > 0.0) || !std::isfinite(bits_per_weight)) {
        throw ValidationError("bits per weight must be positive and finite");
    }
    return static_cast<std::uint64_t>(std::floor(flops_per_byte * (bits_per_weight / 8.0) / 2.0));
}

} // namespace ternpack

#pragma once

// Matrix-vector and small-batch matrix-matrix products against weights that
// stay packed in TQ1/TQ2 blocks. Digits are expanded per block on the fly;
// the inner loop only adds, subtracts or skips activations, and each block's
// partial sum is scaled once.
//
// Accumulation order is fixed: within a block by column, across blocks in
// ascending order, 32-bit throughout. Rows are the unit of parallelism, so
// results are bitwise identical for any thread count.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "ternpack/block_quant.hpp"
#include "ternpack/error.hpp"

namespace ternpack {

/// Row-major matrix of quantized blocks. Each row starts on a block boundary
/// and its last block is zero-padded. Immutable once built.
class PackedMatrix {
public:
    PackedMatrix() = default;

    /// Wraps already-serialized blocks; throws SizeMismatchError unless
    /// bytes.size() == rows * blocks_per_row * block_bytes(format).
    PackedMatrix(std::size_t rows, std::size_t cols, BlockFormat format, std::vector<std::uint8_t> bytes)
        : rows_(rows), cols_(cols), format_(format), bytes_(std::move(bytes)) {
        const std::size_t expected = packed_size(rows, cols, format);
        if (bytes_.size() != expected) {
            throw SizeMismatchError("packed matrix " + std::to_string(rows) + "x" + std::to_string(cols) +
                                    " " + to_string(format) + " needs " + std::to_string(expected) +
                                    " bytes, got " + std::to_string(bytes_.size()));
        }
    }

    static constexpr std::size_t blocks_for(std::size_t cols) noexcept {
        return (cols + kBlockSize - 1) / kBlockSize;
    }

    static constexpr std::size_t packed_size(std::size_t rows, std::size_t cols, BlockFormat format) noexcept {
        return rows * blocks_for(cols) * block_bytes(format);
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    BlockFormat format() const noexcept { return format_; }
    std::size_t blocks_per_row() const noexcept { return blocks_for(cols_); }
    std::size_t row_stride() const noexcept { return blocks_per_row() * block_bytes(format_); }

    /// Exactly the bytes a product reads.
    std::size_t weight_bytes() const noexcept { return bytes_.size(); }

    std::span<const std::uint8_t> bytes() const noexcept { return bytes_; }

    std::span<const std::uint8_t> row_bytes(std::size_t row) const {
        return std::span<const std::uint8_t>(bytes_).subspan(row * row_stride(), row_stride());
    }

    std::span<const std::uint8_t> block_bytes_at(std::size_t row, std::size_t block) const {
        return row_bytes(row).subspan(block * block_bytes(format_), block_bytes(format_));
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    BlockFormat format_ = BlockFormat::TQ2;
    std::vector<std::uint8_t> bytes_;
};

namespace detail {

template <class Block>
void quantize_rows(std::span<const float> weights, std::size_t rows, std::size_t cols, std::uint8_t* dst) {
    BlockValues staging{};
    const std::size_t nblocks = PackedMatrix::blocks_for(cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const float* row = weights.data() + r * cols;
        for (std::size_t b = 0; b < nblocks; ++b) {
            const std::size_t begin = b * kBlockSize;
            const std::size_t len = std::min(kBlockSize, cols - begin);
            std::copy_n(row + begin, len, staging.begin());
            std::fill(staging.begin() + static_cast<std::ptrdiff_t>(len), staging.end(), 0.0f);
            Block block;
            if constexpr (Block::kFormat == BlockFormat::TQ2) {
                block = quantize_block_tq2(staging);
            } else {
                block = quantize_block_tq1(staging);
            }
            block.write_to(std::span<std::uint8_t, Block::kBytes>(dst, Block::kBytes));
            dst += Block::kBytes;
        }
    }
}

} // namespace detail

/// Quantizes a row-major rows x cols matrix block by block along each row.
inline PackedMatrix pack_matrix(std::span<const float> weights, std::size_t rows, std::size_t cols,
                                BlockFormat format) {
    if (weights.size() != rows * cols) {
        throw DimensionMismatchError("pack_matrix: expected " + std::to_string(rows * cols) +
                                     " values, got " + std::to_string(weights.size()));
    }
    std::vector<std::uint8_t> bytes(PackedMatrix::packed_size(rows, cols, format));
    if (format == BlockFormat::TQ2) {
        detail::quantize_rows<TQ2Block>(weights, rows, cols, bytes.data());
    } else {
        detail::quantize_rows<TQ1Block>(weights, rows, cols, bytes.data());
    }
    return PackedMatrix(rows, cols, format, std::move(bytes));
}

/// Packs gamma * trits. Every block holding a nonzero trit gets scale
/// fp16(gamma).
inline PackedMatrix pack_ternarized(const TernarizeResult& t, BlockFormat format) {
    std::vector<float> dense(t.trits.size());
    const float gamma = static_cast<float>(t.gamma);
    for (std::size_t i = 0; i < dense.size(); ++i) {
        dense[i] = gamma * static_cast<float>(t.trits[i]);
    }
    return pack_matrix(dense, t.rows, t.cols, format);
}

namespace detail {

template <class Block>
inline void decode_block(std::span<const std::uint8_t> bytes, BlockDigits& digits, float& scale) {
    Block::digits_from_payload(bytes.data(), digits);
    scale = fp16_to_fp32(read_scale(bytes.data() + Block::kPayloadBytes));
}

template <class Block>
void dequantize_rows(const PackedMatrix& w, float* out) {
    BlockDigits digits{};
    for (std::size_t r = 0; r < w.rows(); ++r) {
        for (std::size_t b = 0; b < w.blocks_per_row(); ++b) {
            float scale = 0.0f;
            decode_block<Block>(w.block_bytes_at(r, b), digits, scale);
            const std::size_t begin = b * kBlockSize;
            const std::size_t len = std::min(kBlockSize, w.cols() - begin);
            for (std::size_t t = 0; t < len; ++t) {
                out[r * w.cols() + begin + t] = scale * static_cast<float>(static_cast<int>(digits[t]) - 1);
            }
        }
    }
}

// digit -> multiplier. Multiplying by +-1 or 0 is exact, and adding a
// signed zero to a sum that started at +0 leaves it unchanged, so this is
// bitwise the add/subtract/skip formulation. Digit 3 never comes out of the
// quantizers; it maps to 2 to agree with dequantization.
inline constexpr float kDigitSign[4] = {-1.0f, 0.0f, 1.0f, 2.0f};

// Y is batch x rows, X is batch x cols.
template <class Block>
void gemm_row_range(const PackedMatrix& w, const float* x, std::size_t batch, float* y, std::size_t row_begin,
                    std::size_t row_end) {
    const std::size_t cols = w.cols();
    const std::size_t rows = w.rows();
    BlockDigits digits{};
    std::vector<float> acc(batch);
    for (std::size_t r = row_begin; r < row_end; ++r) {
        std::fill(acc.begin(), acc.end(), 0.0f);
        for (std::size_t b = 0; b < w.blocks_per_row(); ++b) {
            float scale = 0.0f;
            decode_block<Block>(w.block_bytes_at(r, b), digits, scale);
            const std::size_t begin = b * kBlockSize;
            const std::size_t len = std::min(kBlockSize, cols - begin);
            for (std::size_t j = 0; j < batch; ++j) {
                const float* xb = x + j * cols + begin;
                float sum = 0.0f;
                for (std::size_t t = 0; t < len; ++t) {
                    sum += kDigitSign[digits[t]] * xb[t];
                }
                acc[j] += scale * sum;
            }
        }
        for (std::size_t j = 0; j < batch; ++j) {
            y[j * rows + r] = acc[j];
        }
    }
}

template <class Fn>
void parallel_rows(std::size_t rows, std::size_t threads, Fn&& fn) {
    if (threads == 0) {
        threads = std::max(1u, std::thread::hardware_concurrency());
    }
    threads = std::min(threads, std::max<std::size_t>(rows, 1));
    if (threads <= 1) {
        fn(std::size_t{0}, rows);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    const std::size_t chunk = (rows + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(rows, begin + chunk);
        if (begin >= end) {
            break;
        }
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
}

inline void check_activations(const PackedMatrix& w, std::size_t values, std::size_t batch) {
    if (values != w.cols() * batch) {
        throw DimensionMismatchError("activations: expected " + std::to_string(batch) + " x " +
                                     std::to_string(w.cols()) + " values, got " + std::to_string(values));
    }
}

} // namespace detail

/// Dense row-major float copy of the dequantized matrix.
inline std::vector<float> dequantize(const PackedMatrix& w) {
    std::vector<float> out(w.rows() * w.cols());
    if (w.format() == BlockFormat::TQ2) {
        detail::dequantize_rows<TQ2Block>(w, out.data());
    } else {
        detail::dequantize_rows<TQ1Block>(w, out.data());
    }
    return out;
}

/// Y = X W^T for `batch` activation vectors. X is batch x cols row-major,
/// the result is batch x rows. threads == 0 uses all hardware threads.
inline std::vector<float> gemm(const PackedMatrix& w, std::span<const float> x, std::size_t batch,
                               std::size_t threads = 1) {
    detail::check_activations(w, x.size(), batch);
    std::vector<float> y(batch * w.rows());
    if (batch == 0) {
        return y;
    }
    detail::parallel_rows(w.rows(), threads, [&](std::size_t begin, std::size_t end) {
        if (w.format() == BlockFormat::TQ2) {
            detail::gemm_row_range<TQ2Block>(w, x.data(), batch, y.data(), begin, end);
        } else {
            detail::gemm_row_range<TQ1Block>(w, x.data(), batch, y.data(), begin, end);
        }
    });
    return y;
}

inline std::vector<float> gemv(const PackedMatrix& w, std::span<const float> x, std::size_t threads = 1) {
    return gemm(w, x, 1, threads);
}

/// Dequantize-then-multiply with 64-bit accumulation. Ground truth for the
/// packed kernels.
inline std::vector<double> gemm_reference(const PackedMatrix& w, std::span<const float> x, std::size_t batch) {
    detail::check_activations(w, x.size(), batch);
    std::vector<double> y(batch * w.rows(), 0.0);
    std::vector<double> row(w.cols());
    BlockDigits digits{};
    for (std::size_t r = 0; r < w.rows(); ++r) {
        for (std::size_t b = 0; b < w.blocks_per_row(); ++b) {
            const auto bytes = w.block_bytes_at(r, b);
            float scale = 0.0f;
            if (w.format() == BlockFormat::TQ2) {
                detail::decode_block<TQ2Block>(bytes, digits, scale);
            } else {
                detail::decode_block<TQ1Block>(bytes, digits, scale);
            }
            const std::size_t begin = b * kBlockSize;
            const std::size_t len = std::min(kBlockSize, w.cols() - begin);
            for (std::size_t t = 0; t < len; ++t) {
                row[begin + t] = static_cast<double>(scale) * (static_cast<int>(digits[t]) - 1);
            }
        }
        for (std::size_t j = 0; j < batch; ++j) {
            const float* xj = x.data() + j * w.cols();
            double sum = 0.0;
            for (std::size_t c = 0; c < w.cols(); ++c) {
                sum += row[c] * static_cast<double>(xj[c]);
            }
            y[j * w.rows() + r] = sum;
        }
    }
    return y;
}

inline std::vector<double> gemv_reference(const PackedMatrix& w, std::span<const float> x) {
    return gemm_reference(w, x, 1);
}

/// max_i |y_i - ref_i| / max_i |ref_i|; 0 when both are identically zero.
inline double max_relative_error(std::span<const float> y, std::span<const double> ref) {
    if (y.size() != ref.size()) {
        throw DimensionMismatchError("max_relative_error: length mismatch");
    }
    double max_diff = 0.0;
    double max_ref = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        max_diff = std::max(max_diff, std::fabs(static_cast<double>(y[i]) - ref[i]));
        max_ref = std::max(max_ref, std::fabs(ref[i]));
    }
    if (max_ref == 0.0) {
        return max_diff == 0.0 ? 0.0 : INFINITY;
    }
    return max_diff / max_ref;
}

} // namespace ternpack

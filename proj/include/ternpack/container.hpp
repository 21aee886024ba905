#pragma once

// TPK1 tensor container.
//
//   header : "TPK1" | u32 version (=1) | u32 tensor_count
//   record : u16 name_len | name (UTF-8) | u8 dtype | u8 ndims
//            | ndims x u64 dims | u64 data_len
//            | zero padding to the next 32-byte file offset | data
//
// All integers little-endian. dtype: 0=F32, 1=F16, 2=TQ2, 3=TQ1. Quantized
// tensors are blocked along the last dimension; every leading index is a
// row that starts on a block boundary.

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ternpack/block_quant.hpp"
#include "ternpack/error.hpp"
#include "ternpack/half.hpp"
#include "ternpack/packed_linear.hpp"

namespace ternpack {

enum class DType : std::uint8_t { F32 = 0, F16 = 1, TQ2 = 2, TQ1 = 3 };

inline std::string to_string(DType t) {
    switch (t) {
    case DType::F32: return "f32";
    case DType::F16: return "f16";
    case DType::TQ2: return "tq2";
    case DType::TQ1: return "tq1";
    }
    return "unknown";
}

inline DType dtype_from_string(const std::string& s) {
    if (s == "f32") return DType::F32;
    if (s == "f16") return DType::F16;
    if (s == "tq2") return DType::TQ2;
    if (s == "tq1") return DType::TQ1;
    throw ValidationError("unknown dtype '" + s + "' (expected f32, f16, tq2 or tq1)");
}

inline bool is_quantized(DType t) noexcept { return t == DType::TQ2 || t == DType::TQ1; }

inline BlockFormat block_format(DType t) {
    if (t == DType::TQ2) return BlockFormat::TQ2;
    if (t == DType::TQ1) return BlockFormat::TQ1;
    throw ValidationError("dtype " + to_string(t) + " is not block-quantized");
}

inline DType dtype_of(BlockFormat f) noexcept { return f == BlockFormat::TQ2 ? DType::TQ2 : DType::TQ1; }

inline constexpr char kContainerMagic[4] = {'T', 'P', 'K', '1'};
inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kContainerHeaderBytes = 12;
inline constexpr std::size_t kDataAlignment = 32;

struct Tensor {
    std::string name;
    DType dtype = DType::F32;
    std::vector<std::uint64_t> dims;
    std::vector<std::uint8_t> data;

    std::uint64_t element_count() const {
        return std::accumulate(dims.begin(), dims.end(), std::uint64_t{1}, std::multiplies<>());
    }
    std::uint64_t rows() const {
        return dims.empty() ? 0
                            : std::accumulate(dims.begin(), dims.end() - 1, std::uint64_t{1}, std::multiplies<>());
    }
    std::uint64_t cols() const { return dims.empty() ? 0 : dims.back(); }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Bytes a tensor of this dtype and shape occupies in the data section.
inline std::uint64_t expected_data_len(DType dtype, std::span<const std::uint64_t> dims) {
    if (dims.empty()) {
        throw ValidationError("tensors need at least one dimension");
    }
    using wide = unsigned __int128;
    constexpr wide kLimit = wide{1} << 62;
    const wide cols = dims.back();
    wide rows = 1;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        rows *= dims[i];
        if (rows > kLimit) {
            throw SizeMismatchError("tensor shape too large");
        }
    }
    wide bytes = 0;
    switch (dtype) {
    case DType::F32: bytes = rows * cols * 4; break;
    case DType::F16: bytes = rows * cols * 2; break;
    case DType::TQ2:
    case DType::TQ1:
        bytes = rows * ((cols + kBlockSize - 1) / kBlockSize) * block_bytes(block_format(dtype));
        break;
    default: throw FormatError("unknown dtype tag " + std::to_string(static_cast<int>(dtype)));
    }
    if (cols > kLimit || bytes > kLimit) {
        throw SizeMismatchError("tensor shape too large");
    }
    return static_cast<std::uint64_t>(bytes);
}

// --- tensor construction and conversion -------------------------------------

inline Tensor make_f32_tensor(std::string name, std::vector<std::uint64_t> dims, std::span<const float> values) {
    Tensor t{std::move(name), DType::F32, std::move(dims), {}};
    if (values.size() != t.element_count()) {
        throw DimensionMismatchError("tensor '" + t.name + "': " + std::to_string(values.size()) +
                                     " values for " + std::to_string(t.element_count()) + " elements");
    }
    t.data.resize(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(values[i]);
        for (std::size_t b = 0; b < 4; ++b) {
            t.data[4 * i + b] = static_cast<std::uint8_t>(bits >> (8 * b));
        }
    }
    return t;
}

inline Tensor make_f16_tensor(std::string name, std::vector<std::uint64_t> dims, std::span<const float> values) {
    Tensor t{std::move(name), DType::F16, std::move(dims), {}};
    if (values.size() != t.element_count()) {
        throw DimensionMismatchError("tensor '" + t.name + "': " + std::to_string(values.size()) +
                                     " values for " + std::to_string(t.element_count()) + " elements");
    }
    t.data.resize(values.size() * 2);
    for (std::size_t i = 0; i < values.size(); ++i) {
        detail::write_scale(fp32_to_fp16(values[i]), t.data.data() + 2 * i);
    }
    return t;
}

inline PackedMatrix to_packed_matrix(const Tensor& t) {
    return PackedMatrix(static_cast<std::size_t>(t.rows()), static_cast<std::size_t>(t.cols()),
                        block_format(t.dtype), t.data);
}

inline Tensor from_packed_matrix(std::string name, std::vector<std::uint64_t> dims, const PackedMatrix& m) {
    Tensor t{std::move(name), dtype_of(m.format()), std::move(dims), {}};
    if (t.rows() != m.rows() || t.cols() != m.cols()) {
        throw DimensionMismatchError("tensor '" + t.name + "': dims do not match packed matrix shape");
    }
    t.data.assign(m.bytes().begin(), m.bytes().end());
    return t;
}

/// Element values as floats, dequantizing block formats.
inline std::vector<float> tensor_values(const Tensor& t) {
    if (t.data.size() != expected_data_len(t.dtype, t.dims)) {
        throw SizeMismatchError("tensor '" + t.name + "': data length does not match dims");
    }
    const auto n = static_cast<std::size_t>(t.element_count());
    std::vector<float> out(n);
    switch (t.dtype) {
    case DType::F32:
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t bits = 0;
            for (std::size_t b = 0; b < 4; ++b) {
                bits |= static_cast<std::uint32_t>(t.data[4 * i + b]) << (8 * b);
            }
            out[i] = std::bit_cast<float>(bits);
        }
        return out;
    case DType::F16:
        for (std::size_t i = 0; i < n; ++i) {
            out[i] = fp16_to_fp32(detail::read_scale(t.data.data() + 2 * i));
        }
        return out;
    case DType::TQ2:
    case DType::TQ1:
        return dequantize(to_packed_matrix(t));
    }
    return out;
}

/// Block-quantizes an F32 or F16 tensor along its last dimension.
inline Tensor quantize_tensor(const Tensor& t, BlockFormat format) {
    if (is_quantized(t.dtype)) {
        throw ValidationError("tensor '" + t.name + "' is already quantized");
    }
    const std::vector<float> values = tensor_values(t);
    const PackedMatrix m =
        pack_matrix(values, static_cast<std::size_t>(t.rows()), static_cast<std::size_t>(t.cols()), format);
    return from_packed_matrix(t.name, t.dims, m);
}

// --- byte-level encode/decode -----------------------------------------------

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void raw(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }
    void align(std::size_t to) {
        while (bytes_.size() % to != 0) {
            bytes_.push_back(0);
        }
    }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    void put(std::uint64_t v, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }

    std::span<const std::uint8_t> raw(std::uint64_t n) {
        need(n);
        auto out = bytes_.subspan(pos_, static_cast<std::size_t>(n));
        pos_ += static_cast<std::size_t>(n);
        return out;
    }

    std::size_t position() const noexcept { return pos_; }
    bool at_end() const noexcept { return pos_ == bytes_.size(); }

private:
    void need(std::uint64_t n) const {
        if (n > bytes_.size() - pos_) {
            throw TruncatedFileError("container truncated at offset " + std::to_string(pos_) + " (needed " +
                                     std::to_string(n) + " more bytes)");
        }
    }
    std::uint64_t get(std::size_t n) {
        need(n);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < n; ++i) {
            v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        }
        pos_ += n;
        return v;
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::vector<std::uint8_t> encode_container(std::span<const Tensor> tensors) {
    detail::ByteWriter w;
    w.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(kContainerMagic), 4));
    w.u32(kContainerVersion);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const Tensor& t : tensors) {
        if (t.name.size() > 0xffff) {
            throw ValidationError("tensor name longer than 65535 bytes");
        }
        if (t.dims.empty() || t.dims.size() > 0xff) {
            throw ValidationError("tensor '" + t.name + "' must have 1 to 255 dimensions");
        }
        const std::uint64_t expected = expected_data_len(t.dtype, t.dims);
        if (t.data.size() != expected) {
            throw SizeMismatchError("tensor '" + t.name + "': data length " + std::to_string(t.data.size()) +
                                    " does not match dims (expected " + std::to_string(expected) + ")");
        }
        w.u16(static_cast<std::uint16_t>(t.name.size()));
        w.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(t.name.data()), t.name.size()));
        w.u8(static_cast<std::uint8_t>(t.dtype));
        w.u8(static_cast<std::uint8_t>(t.dims.size()));
        for (const std::uint64_t d : t.dims) {
            w.u64(d);
        }
        w.u64(t.data.size());
        w.align(kDataAlignment);
        w.raw(t.data);
    }
    return w.take();
}

inline std::vector<Tensor> decode_container(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) {
        throw TruncatedFileError("container shorter than its magic");
    }
    if (!std::equal(bytes.begin(), bytes.begin() + 4, reinterpret_cast<const std::uint8_t*>(kContainerMagic))) {
        throw BadMagicError("not a TPK1 container (bad magic)");
    }
    detail::ByteReader r(bytes.subspan(4));
    const std::uint32_t version = r.u32();
    if (version != kContainerVersion) {
        throw VersionMismatchError("unsupported container version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32();
    std::vector<Tensor> tensors;
    tensors.reserve(std::min<std::uint32_t>(count, 1024));
    for (std::uint32_t i = 0; i < count; ++i) {
        Tensor t;
        const std::uint16_t name_len = r.u16();
        const auto name = r.raw(name_len);
        t.name.assign(name.begin(), name.end());
        const std::uint8_t tag = r.u8();
        if (tag > static_cast<std::uint8_t>(DType::TQ1)) {
            throw FormatError("tensor '" + t.name + "': unknown dtype tag " + std::to_string(tag));
        }
        t.dtype = static_cast<DType>(tag);
        const std::uint8_t ndims = r.u8();
        if (ndims == 0) {
            throw FormatError("tensor '" + t.name + "': zero dimensions");
        }
        t.dims.resize(ndims);
        for (auto& d : t.dims) {
            d = r.u64();
        }
        const std::uint64_t data_len = r.u64();
        const std::uint64_t expected = expected_data_len(t.dtype, t.dims);
        if (data_len != expected) {
            throw SizeMismatchError("tensor '" + t.name + "': data_len " + std::to_string(data_len) +
                                    " does not match dims (expected " + std::to_string(expected) + ")");
        }
        // Offsets are relative to the file start; the reader began after the magic.
        const std::size_t absolute = r.position() + 4;
        r.raw((kDataAlignment - absolute % kDataAlignment) % kDataAlignment);
        const auto data = r.raw(data_len);
        t.data.assign(data.begin(), data.end());
        tensors.push_back(std::move(t));
    }
    if (!r.at_end()) {
        throw FormatError("trailing bytes after the last tensor");
    }
    return tensors;
}

inline void write_container(const std::filesystem::path& path, std::span<const Tensor> tensors) {
    const std::vector<std::uint8_t> bytes = encode_container(tensors);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("failed writing '" + path.string() + "'");
    }
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::vector<Tensor> read_container(const std::filesystem::path& path) {
    return decode_container(read_file_bytes(path));
}

} // namespace ternpack

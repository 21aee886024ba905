#pragma once

// Timing harness for one linear layer: packed TQ1/TQ2 kernels against dense
// F16/F32 baselines on the same shape.

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ternpack/container.hpp"
#include "ternpack/error.hpp"
#include "ternpack/half.hpp"
#include "ternpack/packed_linear.hpp"
#include "ternpack/roofline.hpp"

namespace ternpack {

struct BenchConfig {
    std::size_t rows = 4096;
    std::size_t cols = 4096;
    DType dtype = DType::TQ2;
    std::size_t batch = 1;
    std::size_t repetitions = 11;
    std::size_t warmups = 3;
    std::size_t threads = 1;
    std::uint64_t seed = 42;
};

inline constexpr std::size_t kMinBenchRepetitions = 11;

struct BenchRow {
    DType dtype = DType::TQ2;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t batch = 0;
    std::uint64_t weight_bytes = 0; // analytic
    std::uint64_t wall_ns_median = 0;
    double gbytes_per_s = 0.0;
    double gflops = 0.0;
};

inline constexpr const char* kBenchCsvHeader = "format,rows,cols,batch,weight_bytes,wall_ns_median,gbytes_per_s,gflops";

inline std::string to_csv(const BenchRow& row) {
    std::ostringstream os;
    os << to_string(row.dtype) << ',' << row.rows << ',' << row.cols << ',' << row.batch << ','
       << row.weight_bytes << ',' << row.wall_ns_median << ',' << std::fixed << std::setprecision(3)
       << row.gbytes_per_s << ',' << row.gflops;
    return os.str();
}

/// Dense baseline, Y = X W^T with W row-major floats; 32-bit accumulation.
inline void gemm_dense_f32(std::span<const float> w, std::size_t rows, std::size_t cols, std::span<const float> x,
                           std::size_t batch, std::span<float> y, std::size_t threads = 1) {
    detail::parallel_rows(rows, threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t r = begin; r < end; ++r) {
            const float* wr = w.data() + r * cols;
            for (std::size_t j = 0; j < batch; ++j) {
                const float* xj = x.data() + j * cols;
                float sum = 0.0f;
                for (std::size_t c = 0; c < cols; ++c) {
                    sum += wr[c] * xj[c];
                }
                y[j * rows + r] = sum;
            }
        }
    });
}

/// Same with binary16 weights widened per element.
inline void gemm_dense_f16(std::span<const std::uint16_t> w, std::size_t rows, std::size_t cols,
                           std::span<const float> x, std::size_t batch, std::span<float> y, std::size_t threads = 1) {
    detail::parallel_rows(rows, threads, [&](std::size_t begin, std::size_t end) {
        std::vector<float> row(cols);
        for (std::size_t r = begin; r < end; ++r) {
            const std::uint16_t* wr = w.data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) {
                row[c] = fp16_to_fp32(wr[c]);
            }
            for (std::size_t j = 0; j < batch; ++j) {
                const float* xj = x.data() + j * cols;
                float sum = 0.0f;
                for (std::size_t c = 0; c < cols; ++c) {
                    sum += row[c] * xj[c];
                }
                y[j * rows + r] = sum;
            }
        }
    });
}

namespace detail {

template <class Fn>
std::uint64_t median_wall_ns(std::size_t warmups, std::size_t reps, Fn&& fn) {
    for (std::size_t i = 0; i < warmups; ++i) {
        fn();
    }
    std::vector<std::uint64_t> samples;
    samples.reserve(reps);
    for (std::size_t i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        samples.push_back(static_cast<std::uint64_t>(
            std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
    }
    std::sort(samples.begin(), samples.end());
    const std::size_t mid = samples.size() / 2;
    return samples.size() % 2 ? samples[mid] : (samples[mid - 1] + samples[mid]) / 2;
}

} // namespace detail

inline BenchRow bench(const BenchConfig& cfg) {
    if (cfg.batch == 0) {
        throw ValidationError("empty batch");
    }
    if (cfg.rows == 0 || cfg.cols == 0) {
        throw ValidationError("bench shape must be non-empty");
    }
    if (cfg.repetitions < kMinBenchRepetitions) {
        throw ValidationError("bench needs at least " + std::to_string(kMinBenchRepetitions) + " repetitions");
    }

    BenchRow row;
    row.dtype = cfg.dtype;
    row.rows = cfg.rows;
    row.cols = cfg.cols;
    row.batch = cfg.batch;
    const std::vector<std::uint64_t> dims{cfg.rows, cfg.cols};
    row.weight_bytes = expected_data_len(cfg.dtype, dims);

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<float> uniform(-1.0f, 1.0f);
    std::vector<float> weights(cfg.rows * cfg.cols);
    for (auto& v : weights) {
        v = uniform(rng);
    }
    std::vector<float> x(cfg.batch * cfg.cols);
    for (auto& v : x) {
        v = uniform(rng);
    }
    std::vector<float> y(cfg.batch * cfg.rows);

    switch (cfg.dtype) {
    case DType::TQ2:
    case DType::TQ1: {
        const PackedMatrix w = pack_matrix(weights, cfg.rows, cfg.cols, block_format(cfg.dtype));
        row.wall_ns_median = detail::median_wall_ns(cfg.warmups, cfg.repetitions,
                                                    [&] { y = gemm(w, x, cfg.batch, cfg.threads); });
        break;
    }
    case DType::F16: {
        std::vector<std::uint16_t> w(weights.size());
        std::transform(weights.begin(), weights.end(), w.begin(), fp32_to_fp16);
        row.wall_ns_median = detail::median_wall_ns(cfg.warmups, cfg.repetitions, [&] {
            gemm_dense_f16(w, cfg.rows, cfg.cols, x, cfg.batch, y, cfg.threads);
        });
        break;
    }
    case DType::F32:
        row.wall_ns_median = detail::median_wall_ns(cfg.warmups, cfg.repetitions, [&] {
            gemm_dense_f32(weights, cfg.rows, cfg.cols, x, cfg.batch, y, cfg.threads);
        });
        break;
    }
    const double ns = static_cast<double>(std::max<std::uint64_t>(row.wall_ns_median, 1));
    row.gbytes_per_s = static_cast<double>(row.weight_bytes) / ns;
    row.gflops = 2.0 * static_cast<double>(cfg.rows) * static_cast<double>(cfg.cols) *
                 static_cast<double>(cfg.batch) / ns;
    return row;
}

} // namespace ternpack

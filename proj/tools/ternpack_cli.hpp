#pragma once

// Command-line front end. run_cli() does all the work so tests can drive it
// in-process; main() only forwards argv and the standard streams.
//
// Exit codes: 0 success, 1 validation failure, 2 usage / I/O / format error.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <new>
#include <numeric>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ternpack/ternpack.hpp"

namespace ternpack::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitFormat = 2;

namespace detail {

inline std::vector<std::uint64_t> parse_shape(const std::string& text) {
    std::vector<std::uint64_t> dims;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, 'x')) {
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(part, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (part.empty() || used != part.size()) {
            throw ValidationError("bad shape '" + text + "' (expected e.g. 4096x4096)");
        }
        dims.push_back(v);
    }
    if (dims.empty()) {
        throw ValidationError("empty shape");
    }
    return dims;
}

inline std::string shape_string(const std::vector<std::uint64_t>& dims) {
    std::string s;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        s += (i ? "x" : "") + std::to_string(dims[i]);
    }
    return s;
}

inline bool codec_self_check(std::string& why) {
    std::vector<bool> seen(256, false);
    for (unsigned n = 0; n < 243; ++n) {
        std::array<Trit, 5> trits{};
        unsigned v = n;
        for (int j = 4; j >= 0; --j) {
            trits[static_cast<std::size_t>(j)] = static_cast<Trit>(static_cast<int>(v % 3) - 1);
            v /= 3;
        }
        const PackedCode code = encode_trit_block(trits, kFiveTritsPerByte);
        if (code.code > 255 || seen[code.code]) {
            why = "base-3 code collision or overflow";
            return false;
        }
        seen[code.code] = true;
        const TritSequence canonical = decode_trit_block_canonical(code, kFiveTritsPerByte);
        const auto mul = decode_trit_block_mul(static_cast<std::uint8_t>(code.code));
        if (!std::equal(trits.begin(), trits.end(), canonical.begin()) ||
            !std::equal(trits.begin(), trits.end(), mul.begin())) {
            why = "base-3 roundtrip failed for block " + std::to_string(n);
            return false;
        }
    }
    for (unsigned b = 0; b < 256; ++b) {
        const auto byte = static_cast<std::uint8_t>(b);
        if ((byte & 0x03) == 3 || (byte & 0x0c) == 0x0c || (byte & 0x30) == 0x30 || (byte & 0xc0) == 0xc0) {
            continue;
        }
        const TritSequence t = unpack_base4(std::span<const std::uint8_t>(&byte, 1), 4);
        if (pack_base4(t).front() != byte) {
            why = "base-4 roundtrip failed for byte " + std::to_string(b);
            return false;
        }
    }
    return true;
}

// Structural checks on every block of a packed tensor.
inline bool check_blocks(const PackedMatrix& m, std::string& why) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t b = 0; b < m.blocks_per_row(); ++b) {
            const auto bytes = m.block_bytes_at(r, b);
            const std::size_t valid = std::min(kBlockSize, m.cols() - b * kBlockSize);
            const std::string where = "row " + std::to_string(r) + " block " + std::to_string(b);
            BlockDigits digits{};
            std::uint16_t scale = 0;
            if (m.format() == BlockFormat::TQ2) {
                const TQ2Block blk = TQ2Block::read_from(bytes.first<TQ2Block::kBytes>());
                digits = blk.digits();
                scale = blk.scale;
            } else {
                const TQ1Block blk = TQ1Block::read_from(bytes.first<TQ1Block::kBytes>());
                for (std::size_t c = 0; c < TQ1Block::kPayloadBytes; ++c) {
                    const std::size_t len = c < TQ1Block::kFullCodes ? 5 : 1;
                    const TritSequence t = decode_trit_block_canonical(PackedCode{blk.qs[c], 0}, kFiveTritsPerByte);
                    const auto mul = decode_trit_block_mul(blk.qs[c]);
                    if (encode_trit_block(std::span<const Trit>(t.data(), len), kFiveTritsPerByte).code != blk.qs[c] ||
                        !std::equal(t.begin(), t.end(), mul.begin())) {
                        why = where + ": non-canonical base-3 code " + std::to_string(blk.qs[c]);
                        return false;
                    }
                }
                digits = blk.digits();
                scale = blk.scale;
            }
            const float s = fp16_to_fp32(scale);
            if (!std::isfinite(s) || std::signbit(s)) {
                why = where + ": scale is negative or non-finite";
                return false;
            }
            for (std::size_t t = 0; t < kBlockSize; ++t) {
                if (digits[t] > 2) {
                    why = where + ": illegal digit " + std::to_string(digits[t]);
                    return false;
                }
                if (t >= valid && digits[t] != 1) {
                    why = where + ": nonzero padding at offset " + std::to_string(t);
                    return false;
                }
                if (s == 0.0f && digits[t] != 1) {
                    why = where + ": zero scale with nonzero digit";
                    return false;
                }
            }
        }
    }
    return true;
}

inline bool check_products(const PackedMatrix& m, std::string& why) {
    constexpr std::size_t kVectors = 3;
    constexpr double kTolerance = 1e-4;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<float> uniform(-1.0f, 1.0f);
    std::vector<float> x(kVectors * m.cols());
    for (auto& v : x) {
        v = uniform(rng);
    }
    const auto y1 = gemm(m, x, kVectors, 1);
    const auto y2 = gemm(m, x, kVectors, 2);
    if (y1 != y2) {
        why = "gemm differs between 1 and 2 threads";
        return false;
    }
    const auto ref = gemm_reference(m, x, kVectors);
    const double err = max_relative_error(y1, ref);
    if (!(err <= kTolerance)) {
        why = "gemm vs reference relative error " + std::to_string(err);
        return false;
    }
    for (std::size_t j = 0; j < kVectors; ++j) {
        const auto single = gemv(m, std::span<const float>(x).subspan(j * m.cols(), m.cols()));
        if (!std::equal(single.begin(), single.end(), y1.begin() + static_cast<std::ptrdiff_t>(j * m.rows()))) {
            why = "gemv and batched gemm disagree";
            return false;
        }
    }
    return true;
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(15) << v;
    return os.str();
}

} // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"ternpack: ternary weight packing, packed GEMV and scaling-law tools", "ternpack"};
    app.require_subcommand(1);

    std::string in_path;
    std::string out_path;
    std::string format_name = "tq2";

    auto* quantize = app.add_subcommand("quantize", "Block-quantize every float tensor in a container");
    quantize->add_option("--in", in_path, "input container")->required();
    quantize->add_option("--out", out_path, "output container")->required();
    quantize->add_option("--format", format_name, "tq1 or tq2")->check(CLI::IsMember({"tq1", "tq2"}));

    auto* dequantize = app.add_subcommand("dequantize", "Expand every packed tensor to f32");
    dequantize->add_option("--in", in_path, "input container")->required();
    dequantize->add_option("--out", out_path, "output container")->required();

    auto* verify = app.add_subcommand("verify", "Check codec roundtrips, block legality and packed products");
    verify->add_option("--in", in_path, "container to check")->required();

    auto* inspect = app.add_subcommand("inspect", "List tensors in a container");
    inspect->add_option("--in", in_path, "container")->required();

    std::size_t rows = 4096;
    std::size_t cols = 4096;
    std::size_t batch = 1;
    std::size_t reps = kMinBenchRepetitions;
    std::size_t threads = 1;
    std::vector<std::string> bench_formats{"tq2"};
    auto* bench_cmd = app.add_subcommand("bench", "Time one packed or dense linear layer (CSV)");
    bench_cmd->add_option("--rows", rows);
    bench_cmd->add_option("--cols", cols);
    bench_cmd->add_option("--format", bench_formats, "tq2, tq1, f16 or f32; repeatable")
        ->check(CLI::IsMember({"tq1", "tq2", "f16", "f32"}));
    bench_cmd->add_option("--batch", batch);
    bench_cmd->add_option("--reps", reps, "timed repetitions (>= 11)");
    bench_cmd->add_option("--threads", threads, "0 = all hardware threads");

    std::string csv_path;
    auto* fit_cmd = app.add_subcommand("fit", "Fit L = E + A/N^alpha + B/D^beta to a CSV of losses");
    fit_cmd->add_option("--csv", csv_path, "n_params_millions,d_tokens_billions,loss")->required();

    scaling::PowerLawFit law;
    double n_millions = 0.0;
    double d_billions = 0.0;
    auto* predict = app.add_subcommand("predict", "Evaluate the scaling law");
    predict->add_option("--E", law.E)->required();
    predict->add_option("--A", law.A)->required();
    predict->add_option("--alpha", law.alpha)->required();
    predict->add_option("--B", law.B)->required();
    predict->add_option("--beta", law.beta)->required();
    predict->add_option("--n", n_millions, "parameters, millions")->required();
    predict->add_option("--d", d_billions, "tokens, billions")->required();

    double flops_per_byte = 0.0;
    double bits = 0.0;
    auto* critical = app.add_subcommand("critical-batch", "Batch size below which a matmul is memory-bound");
    critical->add_option("--flops-per-byte", flops_per_byte)->required();
    critical->add_option("--bits", bits, "bits per weight")->required();

    std::vector<std::string> shapes;
    auto* foot = app.add_subcommand("footprint", "Stored bytes for tensors in a given format");
    foot->add_option("--format", format_name, "f32, f16, tq1 or tq2")
        ->check(CLI::IsMember({"tq1", "tq2", "f16", "f32"}));
    foot->add_option("--shape", shapes, "e.g. 4096x4096; repeatable");
    foot->add_option("--in", in_path, "take shapes from a container");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitFormat;
    }

    try {
        if (*quantize) {
            const BlockFormat format = block_format(dtype_from_string(format_name));
            std::vector<Tensor> tensors = read_container(in_path);
            for (Tensor& t : tensors) {
                if (!is_quantized(t.dtype)) {
                    t = quantize_tensor(t, format);
                }
                out << t.name << ' ' << to_string(t.dtype) << ' ' << detail::shape_string(t.dims) << ' '
                    << t.data.size() << '\n';
            }
            write_container(out_path, tensors);
        } else if (*dequantize) {
            std::vector<Tensor> tensors = read_container(in_path);
            for (Tensor& t : tensors) {
                if (is_quantized(t.dtype)) {
                    t = make_f32_tensor(t.name, t.dims, tensor_values(t));
                }
            }
            write_container(out_path, tensors);
        } else if (*verify) {
            std::string why;
            if (!detail::codec_self_check(why)) {
                err << "codec: " << why << '\n';
                return kExitValidation;
            }
            out << "codec ok\n";
            bool ok = true;
            for (const Tensor& t : read_container(in_path)) {
                bool tensor_ok = true;
                if (is_quantized(t.dtype)) {
                    const PackedMatrix m = to_packed_matrix(t);
                    tensor_ok = detail::check_blocks(m, why) && detail::check_products(m, why);
                } else {
                    const auto values = tensor_values(t);
                    tensor_ok = std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
                    why = "non-finite value";
                }
                if (tensor_ok) {
                    out << "ok " << t.name << '\n';
                } else {
                    out << "FAIL " << t.name << ": " << why << '\n';
                    ok = false;
                }
            }
            return ok ? kExitOk : kExitValidation;
        } else if (*inspect) {
            const auto tensors = read_container(in_path);
            out << "tensors " << tensors.size() << '\n';
            for (const Tensor& t : tensors) {
                const auto n = t.element_count();
                out << t.name << ' ' << to_string(t.dtype) << ' ' << detail::shape_string(t.dims) << ' '
                    << t.data.size() << " bytes " << std::setprecision(6)
                    << (n ? 8.0 * static_cast<double>(t.data.size()) / static_cast<double>(n) : 0.0)
                    << " bits/weight\n";
            }
        } else if (*bench_cmd) {
            out << kBenchCsvHeader << '\n';
            for (const std::string& f : bench_formats) {
                BenchConfig cfg;
                cfg.rows = rows;
                cfg.cols = cols;
                cfg.dtype = dtype_from_string(f);
                cfg.batch = batch;
                cfg.repetitions = reps;
                cfg.threads = threads;
                out << to_csv(bench(cfg)) << '\n';
            }
        } else if (*fit_cmd) {
            std::ifstream csv(csv_path);
            if (!csv) {
                throw IoError("cannot open '" + csv_path + "'");
            }
            const auto report = scaling::fit(scaling::read_observations_csv(csv));
            nlohmann::ordered_json j;
            j["E"] = report.fit.E;
            j["A"] = report.fit.A;
            j["alpha"] = report.fit.alpha;
            j["B"] = report.fit.B;
            j["beta"] = report.fit.beta;
            j["r_squared"] = report.r_squared;
            j["rss"] = report.rss;
            j["residuals"] = report.residuals;
            out << j.dump(2) << '\n';
        } else if (*predict) {
            out << detail::format_double(scaling::evaluate(law, n_millions, d_billions)) << '\n';
        } else if (*critical) {
            out << critical_batch(flops_per_byte, bits) << '\n';
        } else if (*foot) {
            const DType dtype = dtype_from_string(format_name);
            std::vector<std::vector<std::uint64_t>> dims_list;
            for (const auto& s : shapes) {
                dims_list.push_back(detail::parse_shape(s));
            }
            if (!in_path.empty()) {
                for (const Tensor& t : read_container(in_path)) {
                    dims_list.push_back(t.dims);
                }
            }
            if (dims_list.empty()) {
                throw ValidationError("footprint needs --shape or --in");
            }
            std::uint64_t weights = 0;
            for (const auto& d : dims_list) {
                weights += std::accumulate(d.begin(), d.end(), std::uint64_t{1}, std::multiplies<>());
            }
            const std::uint64_t total = footprint(dims_list, dtype);
            out << "total_bytes=" << total << '\n';
            out << "bits_per_weight=" << std::setprecision(10)
                << (weights ? 8.0 * static_cast<double>(total) / static_cast<double>(weights) : 0.0) << '\n';
        }
    } catch (const FormatError& e) {
        err << "error: " << e.what() << '\n';
        return kExitFormat;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::bad_alloc&) {
        err << "error: allocation failure\n";
        return kExitValidation;
    }
    return kExitOk;
}

} // namespace ternpack::cli

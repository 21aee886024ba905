// Quantizes a random layer to both ternary formats and compares the packed
// product with the dense reference.

#include <cstdio>
#include <random>
#include <vector>

#include "ternpack/ternpack.hpp"

int main() {
    constexpr std::size_t rows = 64;
    constexpr std::size_t cols = 1000;

    std::mt19937 rng(1);
    std::normal_distribution<float> normal(0.0f, 0.02f);
    std::vector<float> w(rows * cols);
    for (auto& v : w) v = normal(rng);
    std::vector<float> x(cols);
    for (auto& v : x) v = normal(rng) * 50.0f;

    // Training-style ternarization: one scale for the whole matrix.
    const ternpack::TernarizeResult t = ternpack::ternarize(w, rows, cols);
    std::printf("gamma = %.6f\n", t.gamma);

    for (const auto format : {ternpack::BlockFormat::TQ2, ternpack::BlockFormat::TQ1}) {
        const ternpack::PackedMatrix m = ternpack::pack_ternarized(t, format);
        const auto y = ternpack::gemv(m, x);
        const auto ref = ternpack::gemv_reference(m, x);
        std::printf("%s: %zu bytes (%.4f bits/weight), max rel err vs reference %.3g\n",
                    ternpack::to_string(format).c_str(), m.weight_bytes(),
                    8.0 * static_cast<double>(m.weight_bytes()) / static_cast<double>(rows * cols),
                    ternpack::max_relative_error(y, ref));
    }
    return 0;
}

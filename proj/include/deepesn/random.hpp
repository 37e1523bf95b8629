#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "deepesn/matrix.hpp"

namespace deepesn {

enum class MatrixRole : std::uint8_t { Input = 0, Recurrent = 1, InterLayer = 2 };

struct SeedSpec {
    std::uint64_t master_seed = 0;
    std::uint32_t layer_index = 1; // 1-based
    MatrixRole role = MatrixRole::Input;

    friend bool operator==(const SeedSpec&, const SeedSpec&) = default;
};

// SplitMix64 finalizer: a bijective 64-bit avalanche mix.
constexpr std::uint64_t avalanche(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Order-sensitive fold of several words into one seed. Each word passes
// through the avalanche before being combined, so (a, b) and (b, a) differ.
constexpr std::uint64_t mix_seed(std::uint64_t seed) noexcept { return avalanche(seed); }

template <typename... Rest>
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t next, Rest... rest) noexcept {
    return mix_seed(avalanche(seed) ^ (next * 0xd6e8feb86659fd93ULL + 0x632be59bd9b4e019ULL), rest...);
}

constexpr std::uint64_t sub_seed(const SeedSpec& s) noexcept {
    return mix_seed(s.master_seed, s.layer_index, static_cast<std::uint64_t>(s.role));
}

// std::mt19937_64 has a standard-mandated output sequence; the floating
// conversions below are spelled out because the std distributions are not.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller; the second variate is discarded to keep streams simple.
    double normal() {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t v;
        do v = engine_();
        while (v >= limit);
        return v % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::mt19937_64 engine_;
};

// Entries i.i.d. uniform on [-1, 1], filled row-major from the spec's sub-stream.
inline Matrix uniform_matrix(const SeedSpec& spec, std::size_t rows, std::size_t cols) {
    Rng rng(sub_seed(spec));
    Matrix m(rows, cols);
    for (auto& v : m.entries()) v = 2.0 * rng.uniform01() - 1.0;
    return m;
}

} // namespace deepesn

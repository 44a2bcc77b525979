#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "steerlab/common.hpp"

namespace steerlab {

// Seeded generator with hand-rolled distributions. std::mt19937_64 output is
// specified by the standard, but the std distributions are not, so uniform and
// normal draws are built here to keep artifacts byte-identical across builds.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Unbiased integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) {
        std::uint64_t mask = ~std::uint64_t{0} >> std::countl_zero(n | 1);
        for (;;) {
            std::uint64_t v = engine_() & mask;
            if (v < n) return v;
        }
    }

    int index(int n) { return static_cast<int>(below(static_cast<std::uint64_t>(n))); }

    // Box-Muller, two fresh uniforms per call.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform01();
        double u2 = uniform01();
        // u1 == 0 would take log(0); nudge to the smallest representable draw.
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        double radius = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * radius * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

// Stable seed derivation: hash(master, label, index). Every stage and every
// parallel unit draws from its own derived stream, so results do not depend
// on scheduling order.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label, std::uint64_t index = 0) {
    char bytes[16];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((master >> (8 * i)) & 0xff);
    for (int i = 0; i < 8; ++i) bytes[8 + i] = static_cast<char>((index >> (8 * i)) & 0xff);
    std::uint64_t h = fnv1a64(std::string_view(bytes, 8));
    h = fnv1a64(label, h);
    h = fnv1a64(std::string_view(bytes + 8, 8), h);
    // splitmix64 finalizer to spread low-entropy inputs
    h += 0x9e3779b97f4a7c15ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    return h ^ (h >> 31);
}

}  // namespace steerlab

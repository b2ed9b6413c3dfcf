#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace lorablend {

// Deterministic random source. std::mt19937_64 is fully specified by the
// standard, so the raw 64-bit stream is identical on every platform; the
// uniform/normal transforms below are spelled out explicitly instead of
// going through std::*_distribution (whose output is implementation-defined).
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Approximate standard normal: sum of twelve uniforms, centered.
    // Uses only IEEE adds and one subtraction, so the stream is bit-identical
    // on every platform (libm transcendentals are not correctly rounded and
    // would break cross-platform checkpoint reproducibility).
    double normal() {
        double s = 0.0;
        for (int i = 0; i < 12; ++i) {
            s += uniform();
        }
        return s - 6.0;
    }

    // Derives an independent stream seed from a root seed and a name.
    // Mapping: FNV-1a(name) xor splitmix-style spread of the root seed.
    static std::uint64_t stream_seed(std::uint64_t root, std::string_view name) {
        std::uint64_t h = 1469598103934665603ull;  // FNV offset basis
        for (const char c : name) {
            h ^= static_cast<std::uint8_t>(c);
            h *= 1099511628211ull;  // FNV prime
        }
        std::uint64_t z = root + 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        z ^= z >> 31;
        return h ^ z;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace lorablend

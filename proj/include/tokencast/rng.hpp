#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

namespace tokencast {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

// Expands one user-facing 64-bit seed into independent per-module streams.
// Every source of randomness in the pipeline derives its seed this way, so
// sub-runs (synth, train, eval, ...) are reproducible in isolation.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label) {
    return detail::splitmix64(root ^ detail::fnv1a64(label));
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label,
                                 std::uint64_t index) {
    return detail::splitmix64(derive_seed(root, label) + 0x632be59bd9b4e019ULL * (index + 1));
}

// mt19937_64 with hand-rolled uniform/normal transforms. The standard pins
// the engine's output exactly; the distributions in <random> are
// implementation-defined, so we avoid them to keep every seeded run
// bit-reproducible across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1), 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Unbiased integer in [0, n) via rejection.
    std::int64_t uniform_int(std::int64_t n) {
        const auto un = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        std::uint64_t x = gen_();
        while (x >= limit) x = gen_();
        return static_cast<std::int64_t>(x % un);
    }

    // Box-Muller with a cached spare.
    double normal(double mean = 0.0, double sd = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + sd * spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return mean + sd * r * std::cos(theta);
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace tokencast

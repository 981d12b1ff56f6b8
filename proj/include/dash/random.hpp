#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace dash {

// splitmix64: tiny, fast, and bit-reproducible on every platform. std::
// distributions are implementation-defined, which would break the
// byte-identical-reports guarantee, so sampling is done by hand here.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0x9e3779b97f4a7c15ull) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; the spare value is discarded to keep the state stream
    // independent of call grouping.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    double gumbel() {
        double u = uniform();
        while (u <= 0.0 || u >= 1.0) u = uniform();
        return -std::log(-std::log(u));
    }

    // integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    // k distinct indices from [0, n), uniformly, without replacement
    // (partial Fisher-Yates).
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        std::vector<std::size_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        if (k > n) k = n;
        for (std::size_t i = 0; i < k; ++i) {
            std::size_t j = i + static_cast<std::size_t>(below(n - i));
            std::swap(pool[i], pool[j]);
        }
        pool.resize(k);
        return pool;
    }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

// Stable 64-bit FNV-1a, used to derive independent seed streams per purpose
// ("init", "gumbel", "subsample", ...) from one run seed.
inline std::uint64_t hash_str(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose, std::uint64_t index = 0) {
    std::uint64_t h = hash_str(purpose);
    h ^= base + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h ^= (index + 1) * 0xd1b54a32d192ed03ull;
    return h;
}

}  // namespace dash

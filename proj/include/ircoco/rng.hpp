#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace ircoco {

// SplitMix64-based generator. Small, fast, and fully specified here so that
// seeded runs reproduce bit-for-bit regardless of the standard library.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, bound). bound must be > 0.
    uint64_t uniform_int(uint64_t bound) {
        return uint64_t((static_cast<unsigned __int128>(next_u64()) * bound) >> 64);
    }

    // Standard normal via Box-Muller; caches the spare value.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = size_t(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derives an independent stream for a named purpose. Keeping e.g. batch
    // shuffling and trajectory sampling on separate streams means one loop can
    // consume extra draws without perturbing the other.
    Rng fork(std::string_view label, uint64_t salt = 0) const {
        uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
        for (const char c : label) h = (h ^ uint64_t(uint8_t(c))) * 0x100000001b3ull;
        h ^= salt + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        Rng out(state_ ^ h);
        out.next_u64();
        return out;
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// FNV-1a over arbitrary bytes; used for config/corpus fingerprints.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 0x100000001b3ull;
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

}  // namespace ircoco

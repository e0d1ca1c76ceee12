#pragma once
// Deterministic RNG built on xoshiro256++ with splitmix64 seeding. All
// distributions are hand-rolled so that streams are reproducible across
// standard libraries and platforms. Named substreams let independent parts
// of a run (market sim, init, dropout, ...) draw without interfering.

#include "mtms/errors.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace mtms {

namespace detail {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix64(std::uint64_t x) {
    return splitmix64_next(x);
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

} // namespace detail

class Rng {
public:
    explicit Rng(std::uint64_t seed) : root_(seed) {
        std::uint64_t sm = seed;
        for (auto& word : s_) word = detail::splitmix64_next(sm);
    }

    std::uint64_t root_seed() const { return root_; }

    // Independent stream derived from this stream's root seed and a label.
    Rng substream(const std::string& name, std::uint64_t index = 0) const {
        std::uint64_t h = detail::fnv1a64(name);
        h ^= detail::mix64(index + 0x9E3779B97F4A7C15ULL);
        return Rng(root_ ^ h);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    // Unbiased integer on [0, n) by rejection.
    std::uint64_t uniform_below(std::uint64_t n) {
        if (n == 0) throw UsageError("uniform_below: n must be positive");
        const std::uint64_t thresh = (0 - n) % n;
        for (;;) {
            const std::uint64_t x = next_u64();
            if (x >= thresh) return x % n;
        }
    }

    // Inclusive on both ends.
    int uniform_int(int lo, int hi) {
        if (lo > hi) throw UsageError("uniform_int: lo > hi");
        const auto span = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo) + 1;
        return lo + static_cast<int>(uniform_below(span));
    }

    // Marsaglia polar method with a cached spare; avoids trig for portability.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    double lognormal(double mu, double sigma) { return std::exp(normal(mu, sigma)); }

    // Fisher-Yates, back to front.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t s_[4]{};
    std::uint64_t root_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace mtms

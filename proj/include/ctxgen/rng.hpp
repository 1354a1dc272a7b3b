#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "ctxgen/real.hpp"

namespace ctxgen {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace detail

/// Self-contained xoshiro256** generator. All randomness in the project flows
/// through this class so runs are bitwise reproducible for a fixed seed,
/// independent of the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : root_seed_(seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) {
            word = detail::splitmix64(sm);
        }
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl_(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl_(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    real uniform(real lo, real hi) {
        return lo + static_cast<real>(next_double()) * (hi - lo);
    }

    /// Uniform integer in [0, n). n must be positive.
    int uniform_int(int n) {
        return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
    }

    /// Gaussian via Marsaglia's polar method with a cached spare.
    real normal(real mean, real stddev) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + stddev * static_cast<real>(spare_);
        }
        double u = 0.0, v = 0.0, s = 0.0;
        do {
            u = 2.0 * next_double() - 1.0;
            v = 2.0 * next_double() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return mean + stddev * static_cast<real>(u * m);
    }

    template <class T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j =
                static_cast<std::size_t>(next_u64() % static_cast<std::uint64_t>(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    /// Independent stream keyed on (root seed, a, b). Derivation uses only the
    /// root seed, so streams do not depend on how much the parent was consumed.
    Rng derive(std::uint64_t a, std::uint64_t b) const {
        std::uint64_t sm = root_seed_;
        std::uint64_t h = detail::splitmix64(sm);
        sm ^= a * 0x9e3779b97f4a7c15ULL;
        h ^= detail::splitmix64(sm);
        sm ^= b + 0xd1b54a32d192ed03ULL;
        h ^= detail::splitmix64(sm);
        return Rng(h);
    }

    std::uint64_t root_seed() const { return root_seed_; }

private:
    static std::uint64_t rotl_(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t root_seed_;
    std::uint64_t state_[4] = {};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace ctxgen

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string_view>

namespace dlens {

// Deterministic RNG with hand-rolled distributions. std::mt19937_64 output is
// pinned by the standard, but the std distributions are not; implementing the
// transforms here makes streams bit-reproducible across toolchains.
class Rng {
  public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Unbiased integer in [0, n) via rejection sampling.
    int64_t uniform_int(int64_t n) {
        if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return static_cast<int64_t>(x % un);
    }

    // Standard normal via Box-Muller; the second deviate is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Categorical draw by inverse CDF over `probs` (need not be exactly normalized;
    // the final bucket absorbs rounding slack).
    int32_t categorical(std::span<const double> probs) {
        if (probs.empty()) throw std::invalid_argument("categorical: empty distribution");
        double total = 0.0;
        for (double p : probs) total += p;
        const double u = uniform() * total;
        double acc = 0.0;
        for (size_t i = 0; i < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) return static_cast<int32_t>(i);
        }
        return static_cast<int32_t>(probs.size() - 1);
    }

  private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Counter-based seed fan-out: every component derives its stream from the
// single run seed and its own name (documented in the CLI help).
inline uint64_t subseed(uint64_t master, std::string_view component, uint64_t index = 0) {
    uint64_t h = 1469598103934665603ull;  // FNV-1a offset basis
    auto mix = [&h](uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    };
    mix(master);
    for (char c : component) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    mix(index);
    // splitmix64 finalizer for avalanche
    h += 0x9e3779b97f4a7c15ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    return h ^ (h >> 31);
}

}  // namespace dlens

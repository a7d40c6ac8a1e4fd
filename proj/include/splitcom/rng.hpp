#pragma once

#include <cmath>
#include <cstdint>

namespace splitcom {

/// Counter-based pseudo random stream. Each draw hashes (seed, counter) with
/// the splitmix64 finalizer, so streams derived from the same seed are
/// replayable and independent of call-site history. Normal deviates use
/// Box-Muller on two uniform draws; the spare value is cached.
class Rng {
   public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = seed_ + (++counter_) * 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform in (0, 1]; never returns 0 so log() is always safe.
    double uniform() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

    /// Uniform integer in [0, bound).
    std::uint64_t uniform_below(std::uint64_t bound) { return next_u64() % bound; }

    float normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = static_cast<float>(r * std::sin(a));
        have_spare_ = true;
        return static_cast<float>(r * std::cos(a));
    }

    std::uint64_t seed() const { return seed_; }

    /// Stable seed derivation for named sub-streams.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0,
                                std::uint64_t d = 0) {
        std::uint64_t h = seed;
        for (std::uint64_t v : {a, b, c, d}) {
            h ^= v + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
            h = (h ^ (h >> 30)) * 0xBF58476D1CE4E5B9ull;
        }
        return h ^ (h >> 31);
    }

   private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
    float spare_ = 0.0f;
    bool have_spare_ = false;
};

}  // namespace splitcom

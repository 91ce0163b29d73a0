#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace closs::sim {

// splitmix64; used to derive independent stream seeds from (seed, index)
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// mt19937_64 with hand-rolled samplers. The engine is fully specified by
// the standard and the samplers avoid std::*_distribution, whose algorithms
// vary across standard libraries, so a seeded run is bit-identical on any
// platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    Rng(std::uint64_t seed, std::uint64_t stream) : engine_(mix_seed(seed, stream)) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1) with 53-bit resolution
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // uniform integer in [0, bound) by rejection; bound > 0
    std::uint64_t uniform_below(std::uint64_t bound) {
        const std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % bound;
        std::uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return v % bound;
    }

    bool bernoulli(double p) { return uniform01() < p; }

    // Box-Muller; one spare value cached
    double normal(double mean = 0.0, double sd = 1.0) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + sd * spare_;
        }
        double u1, u2;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return mean + sd * r * std::cos(a);
    }

    // lognormal given the target mean of the distribution and log-space sd
    double lognormal_mean(double mean, double sigma_log) {
        const double mu = std::log(mean) - 0.5 * sigma_log * sigma_log;
        return std::exp(normal(mu, sigma_log));
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace closs::sim

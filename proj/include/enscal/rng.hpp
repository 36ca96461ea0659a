// Deterministic random number generation. Every stochastic routine in the
// library draws through this wrapper so that results are bit-reproducible
// for a given seed, independent of platform library internals and of how
// work is distributed across threads. Substreams are derived by hashing the
// seed together with integer labels (replication index, case index, ...).
#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace enscal {

// SplitMix64 step, used both as a hash and as a seeding sequence.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Collapse a list of labels into one well-mixed 64-bit value.
inline std::uint64_t mix_labels(std::initializer_list<std::uint64_t> labels) {
    std::uint64_t h = 0x8000000000000001ULL;
    for (std::uint64_t v : labels) {
        h ^= splitmix64(v);
        (void)splitmix64(h);
        h = h * 0x2545F4914F6CDD1DULL + 0x9E3779B97F4A7C15ULL;
    }
    return splitmix64(h);
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed_sequence(seed)) {}

    static Rng substream(std::initializer_list<std::uint64_t> labels) {
        return Rng(mix_labels(labels));
    }

    std::uint64_t bits() { return engine_(); }

    // Uniform on the open interval (0, 1); never returns an endpoint.
    double uniform() {
        return (static_cast<double>(bits() >> 11) + 0.5) * 0x1.0p-53;
    }

    // Unbiased integer on [0, n).
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = bits();
        while (x >= limit) x = bits();
        return x % n;
    }

    // Standard normal via the polar method. The paired variate is discarded
    // so the draw sequence is a pure function of the engine state.
    double normal() {
        for (;;) {
            double u = 2.0 * uniform() - 1.0;
            double v = 2.0 * uniform() - 1.0;
            double s = u * u + v * v;
            if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
        }
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    double exponential() { return -std::log(uniform()); }

    // Gamma with given shape and rate, Marsaglia-Tsang squeeze method.
    double gamma(double shape, double rate) {
        if (shape < 1.0) {
            double boost = std::pow(uniform(), 1.0 / shape);
            return gamma(shape + 1.0, rate) * boost;
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
        }
    }

  private:
    static std::mt19937_64 seed_sequence(std::uint64_t seed) {
        // Expand the seed through SplitMix64 as recommended for seeding
        // generators with small entropy inputs.
        std::uint64_t s = seed;
        return std::mt19937_64(splitmix64(s));
    }

    std::mt19937_64 engine_;
};

}  // namespace enscal

#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include "fedmmkt/errors.hpp"

namespace fedmmkt {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Tags for deriving independent sub-streams from the master seed. Every
// random decision in the simulator flows through a stream derived from
// (master seed, path of tags), so outcomes do not depend on scheduling.
enum StreamTag : std::uint64_t {
    kWorldPrototypes = 1,
    kWorldCrossModal,
    kWorldCorruption,
    kPartition,
    kClientData,
    kClientInit,
    kClientPretrain,
    kGeneratorInit,
    kCrossAttention,
    kHeldout,
    kProbe,
    kRound,
    kGenerate,
    kAugment,
    kFinetune,
    kRetrain,
    kGanTest,
};

// Deterministic random stream. Distributions are implemented here rather
// than with std::*_distribution because the standard leaves those
// implementation-defined; mt19937_64 itself is fully specified, so a given
// (seed, call sequence) reproduces bit-identical results everywhere.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : engine_(seed) {}

    static RngStream derive(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
        std::uint64_t s = master;
        (void)splitmix64(s);
        for (std::uint64_t id : path) {
            s ^= id + 0x9E3779B97F4A7C15ULL + (s << 6) + (s >> 2);
            (void)splitmix64(s);
        }
        return RngStream(splitmix64(s));
    }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased index in [0, n) via rejection.
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) throw InvalidInputError("uniform_index: n must be positive");
        const std::uint64_t span = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return static_cast<std::size_t>(x % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal, Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Gamma(shape, 1), Marsaglia-Tsang; shape < 1 boosted via the u^(1/shape) trick.
    double gamma(double shape) {
        if (!(shape > 0.0)) throw InvalidInputError("gamma: shape must be positive");
        if (shape < 1.0) {
            double u = 0.0;
            do {
                u = uniform();
            } while (u <= 0.0);
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = 0.0;
            double v = 0.0;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    // Symmetric Dirichlet(alpha) over k categories.
    std::vector<double> dirichlet(double alpha, std::size_t k) {
        std::vector<double> draws(k);
        double sum = 0.0;
        for (auto& g : draws) {
            g = gamma(alpha);
            sum += g;
        }
        if (sum <= 0.0) {
            // All draws underflowed (tiny alpha); fall back to uniform.
            for (auto& g : draws) g = 1.0 / static_cast<double>(k);
            return draws;
        }
        for (auto& g : draws) g /= sum;
        return draws;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = i;
        shuffle(p);
        return p;
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace fedmmkt

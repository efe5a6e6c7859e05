#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

namespace desta {

/// Seeded random source with distribution code owned here, so draws are
/// identical across standard library implementations. Counts every raw
/// engine call, which lets tests audit how much randomness an operation uses.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() {
        ++draws_;
        return engine_();
    }

    /// Uniform double in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform index in [0, n). Rejection sampling keeps it unbiased.
    std::size_t index(std::size_t n);

    bool bernoulli(double p) { return uniform() < p; }

    /// Gamma(1, 1) variate, used for Dirichlet-uniform rows.
    double exponential();

    std::uint64_t draws() const { return draws_; }

    /// Textual engine state; restore() continues the exact same stream.
    std::string state() const;
    void restore(const std::string& state, std::uint64_t draws);

    /// Independent stream for (seed, stream) pairs via SplitMix64 mixing.
    static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

private:
    std::mt19937_64 engine_;
    std::uint64_t draws_ = 0;
};

}  // namespace desta

#include "desta/rng.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace desta {

std::size_t Rng::index(std::size_t n) {
    if (n <= 1) {
        return 0;
    }
    const std::uint64_t range = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % range;
    std::uint64_t x = next_u64();
    while (x >= limit) {
        x = next_u64();
    }
    return static_cast<std::size_t>(x % range);
}

double Rng::exponential() {
    // 1 - u lies in (0, 1], so the log is finite.
    return -std::log1p(-uniform());
}

std::string Rng::state() const {
    std::ostringstream out;
    out << engine_;
    return out.str();
}

void Rng::restore(const std::string& state, std::uint64_t draws) {
    std::istringstream in(state);
    in >> engine_;
    if (!in) {
        throw std::invalid_argument("malformed random engine state");
    }
    draws_ = draws;
}

std::uint64_t Rng::derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace desta

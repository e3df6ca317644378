#ifndef TREEP_RNG_HPP
#define TREEP_RNG_HPP

#include <cstdint>

namespace treep {

// SplitMix64. Hand-rolled so that sequences are identical on every platform
// and toolchain; std:: distributions are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, bound), bound > 0
    std::uint64_t next_below(std::uint64_t bound) {
        return next_u64() % bound;
    }

    // uniform in [0, 1)
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // exponential with the given mean
    double next_exponential(double mean);

private:
    std::uint64_t state_;
};

// Stable hash for deriving per-purpose seeds and per-node jitter.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed ^ (stream * 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace treep

#endif

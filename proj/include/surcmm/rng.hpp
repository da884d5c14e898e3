#ifndef SURCMM_RNG_HPP
#define SURCMM_RNG_HPP

#include <cstdint>
#include <initializer_list>

#include "surcmm/math.hpp"

namespace surcmm {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
} // namespace detail

// Deterministic, platform-independent stream: xoshiro256++ seeded through
// splitmix64 from (seed, tag...). Sub-streams for replicates/companies are
// derived from the tags, so parallel schedules cannot change any draw.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed,
                       std::initializer_list<std::uint64_t> tags = {}) {
        std::uint64_t mix = seed;
        for (std::uint64_t t : tags) {
            // combine as in boost::hash_combine, widened to 64 bits
            mix ^= t + 0x9e3779b97f4a7c15ULL + (mix << 12) + (mix >> 4);
        }
        std::uint64_t sm = mix;
        for (auto& word : state_) word = detail::splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform on the open interval (0,1): lattice of 2^53 midpoints.
    double next_uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    // Standard normal via inverse CDF; keeps the stream one-draw-per-variate.
    double next_normal() { return normal_quantile(next_uniform()); }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }
    std::uint64_t state_[4]{};
};

} // namespace surcmm

#endif // SURCMM_RNG_HPP

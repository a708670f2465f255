#ifndef TILQ_SIM_RNG_HPP
#define TILQ_SIM_RNG_HPP

#include <cstdint>
#include <random>

namespace tilq::rng {

inline std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Independent per-path stream: the engine seed is a splitmix64 mix of the
// run seed and the path index, so path p's draws do not depend on how paths
// are scheduled across threads.
inline std::mt19937_64 path_engine(std::uint64_t seed, std::uint64_t path) {
    std::uint64_t s = seed ^ (0xD1B54A32D192ED03ULL * (path + 1));
    splitmix64(s);
    return std::mt19937_64(splitmix64(s));
}

// Poisson count by Knuth inversion; cheap for the small step intensities
// theta_k * h used on the grid.
inline int poisson_count(std::mt19937_64& eng, double exp_neg_lambda) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    int k = -1;
    double p = 1.0;
    do {
        p *= unif(eng);
        ++k;
    } while (p > exp_neg_lambda && k < 1000000);
    return k;
}

} // namespace tilq::rng

#endif

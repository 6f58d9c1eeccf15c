#pragma once

#include <cstdint>
#include <random>

namespace neurove {

/// splitmix64 step; used to derive independent seed streams from one root
/// seed so that e.g. the phase draw and the train/val shuffle do not share
/// a generator.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
    std::uint64_t s = root ^ (0x6a09e667f3bcc909ull + stream * 0x9e3779b97f4a7c15ull);
    splitmix64(s);
    return splitmix64(s);
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace neurove

#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace airbfl {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; decorrelates derived seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed) { return splitmix64(seed); }

template <typename... Rest>
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag, Rest... rest) {
    return mix_seed(splitmix64(seed ^ splitmix64(tag)), rest...);
}

// Independent substream derived from a master seed and integer tags.
// Same (master, tags) always yields the same stream.
template <typename... Tags>
Rng make_stream(std::uint64_t master, Tags... tags) {
    return Rng(mix_seed(master, static_cast<std::uint64_t>(tags)...));
}

inline std::vector<double> standard_normal(Rng& rng, std::size_t n) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> out(n);
    for (auto& v : out) v = dist(rng);
    return out;
}

}  // namespace airbfl

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace czsr {

// All randomness in the project flows from one user-facing seed. Independent
// consumers draw from named sub-streams so that adding a consumer cannot
// perturb the draws of another.
inline std::uint64_t substream_seed(std::uint64_t seed, std::string_view name) {
    // FNV-1a over the name, then splitmix64 to spread the bits.
    std::uint64_t h = 1469598103934665603ull;
    for (char c : name) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        h *= 1099511628211ull;
    }
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (h | 1ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::mt19937_64 make_stream(std::uint64_t seed, std::string_view name) {
    return std::mt19937_64(substream_seed(seed, name));
}

}  // namespace czsr

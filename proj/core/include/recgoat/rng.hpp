#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace recgoat {

// splitmix64, used to derive well-separated seeds for named substreams so
// that adding a consumer to one stream never shifts the draws of another.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : s) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

// Deterministic substream: seed mixed with a label and an index.
inline std::mt19937_64 substream(std::uint64_t seed, std::string_view label, std::uint64_t index = 0) {
    std::uint64_t s = splitmix64(seed ^ fnv1a(label));
    s = splitmix64(s ^ (0x517cc1b727220a95ULL * (index + 1)));
    return std::mt19937_64(s);
}

}  // namespace recgoat

#pragma once

// Deterministic randomness plumbing. All randomness in a run flows from one
// master seed through named sub-streams, so partial reruns (data generation,
// episode sampling, parameter init) stay reproducible independently of each
// other.

#include <cstdint>
#include <random>
#include <string_view>

namespace sigshot::rng {

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Seed for the named sub-stream of a master seed.
inline std::uint64_t derive(std::uint64_t master, std::string_view stream) {
    return splitmix64(master ^ fnv1a64(stream));
}

// Seed for the idx-th element of a named sub-stream (per-episode, per-instance).
inline std::uint64_t derive(std::uint64_t master, std::string_view stream, std::uint64_t idx) {
    return splitmix64(derive(master, stream) + 0x632be59bd9b4e019ull * (idx + 1));
}

inline std::mt19937_64 engine(std::uint64_t seed) {
    return std::mt19937_64(seed);
}

} // namespace sigshot::rng

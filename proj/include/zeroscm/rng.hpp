#pragma once

#include <cstdint>
#include <random>

namespace zeroscm {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Counter-based seed derivation: independent streams from one master seed,
/// stable regardless of scheduling order.
inline uint64_t derive_seed(uint64_t master, uint64_t stream) {
    return splitmix64(splitmix64(master) ^ splitmix64(stream * 0x9e3779b97f4a7c15ull + 1));
}
inline uint64_t derive_seed(uint64_t master, uint64_t a, uint64_t b) {
    return derive_seed(derive_seed(master, a), b);
}
inline uint64_t derive_seed(uint64_t master, uint64_t a, uint64_t b, uint64_t c) {
    return derive_seed(derive_seed(master, a, b), c);
}

inline std::mt19937_64 make_engine(uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace zeroscm

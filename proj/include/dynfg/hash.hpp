#pragma once

#include <cstdint>
#include <string_view>

namespace dynfg {

/// 64-bit FNV-1a. Stable across platforms; used for seed derivation and
/// config fingerprints.
constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 14695981039346656037ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

/// Seed for the named parameter under a run seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) {
    std::uint64_t h = fnv1a(name);
    h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h;
}

}  // namespace dynfg

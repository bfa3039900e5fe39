#pragma once

#include <cstdint>
#include <random>

namespace impact::detail {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Independent generator for work item `index` under `master`. Depends only
/// on the pair, so items can be processed in any order or in parallel.
inline std::mt19937_64 substream(std::uint64_t master, std::uint64_t index) {
    const std::uint64_t a = splitmix64(master);
    const std::uint64_t b = splitmix64(a ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
    std::seed_seq seq{static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32)};
    return std::mt19937_64(seq);
}

/// 64-bit FNV-1a, used for input fingerprints in run manifests.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace impact::detail

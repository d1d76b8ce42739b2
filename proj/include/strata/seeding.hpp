#pragma once

#include <cstdint>
#include <string_view>

namespace strata {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Independent stream seed for one consumer (init, dropout, shuffle, ...) of a run seed.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view consumer) noexcept {
    return splitmix64(base ^ splitmix64(fnv1a64(consumer)));
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept {
    return splitmix64(splitmix64(base) + index);
}

}  // namespace strata

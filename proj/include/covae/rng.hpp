#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace covae {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Independent stream derived from a master seed and a stream name
// ("data", "init", "batch", "noise", ...).
inline Rng make_stream(std::uint64_t master_seed, std::string_view name) {
  return Rng(splitmix64(master_seed ^ fnv1a(name)));
}

}  // namespace covae

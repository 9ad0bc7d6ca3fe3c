#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace panelboot {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; a bijective mixer on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed of the stream addressed by (master, path...). Streams with different
// paths are decorrelated; the mapping depends only on its arguments, so a
// replicate draws the same numbers regardless of which thread runs it.
inline std::uint64_t stream_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(master);
  for (std::uint64_t p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_stream(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  return Rng(stream_seed(master, path));
}

}  // namespace panelboot

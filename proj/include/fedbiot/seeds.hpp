#pragma once

#include <cstdint>
#include <initializer_list>

namespace fedbiot {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Stateless seed derivation: every random draw in a run is keyed by the run
// seed plus a purpose tag and counters, so resuming from a checkpoint needs no
// generator state.
template <class... Ts>
std::uint64_t derive_seed(std::uint64_t seed, Ts... parts) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t p : std::initializer_list<std::uint64_t>{static_cast<std::uint64_t>(parts)...}) {
    h = splitmix64(h ^ p);
  }
  return h;
}

}  // namespace fedbiot

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace snspd {

/// splitmix64 finalizer; a bijection on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based sub-seed: depends only on (master, stream, index).
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                    std::uint64_t index) {
  return mix64(mix64(master ^ mix64(stream)) + index);
}

using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  return Engine(seq);
}

/// Uniform on (0, 1], safe to pass to log().
inline double uniform_open0(Engine& eng) {
  // generate_canonical may return exactly 1.0 on some libstdc++ versions
  for (;;) {
    const double u = 1.0 - std::generate_canonical<double, 53>(eng);
    if (u > 0.0) return u;
  }
}

inline double exp1(Engine& eng) { return -std::log(uniform_open0(eng)); }

}  // namespace snspd

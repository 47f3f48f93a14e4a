#pragma once

#include <cstdint>
#include <span>

namespace graphmill::rng {

// splitmix64; the usual finalizer constants.
inline std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Derives an independent stream key from a base seed and stream coordinates.
// Used to key per-(seed, hop, node, edge-type) and per-(seed, batch) streams so
// results do not depend on thread scheduling or worker count.
inline std::uint64_t derive(std::uint64_t seed, std::uint64_t a) {
  return mix(seed ^ mix(a));
}
inline std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return derive(derive(seed, a), b);
}
inline std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                            std::uint64_t c) {
  return derive(derive(seed, a, b), c);
}
inline std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                            std::uint64_t c, std::uint64_t d) {
  return derive(derive(seed, a, b, c), d);
}

// Small counter-based generator. Unlike std::mt19937_64 + std::*_distribution,
// every draw here is pinned down by this header alone, so sampled subgraphs and
// weight initializations are reproducible across standard libraries.
class Stream {
 public:
  explicit Stream(std::uint64_t key) : state_(mix(key)) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  // Unbiased integer in [0, n) via rejection.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double next_real() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double next_real(double lo, double hi) { return lo + (hi - lo) * next_real(); }

 private:
  std::uint64_t state_;
};

// Hashes an id list into a single key (for edge-type names etc.).
inline std::uint64_t hash_bytes(std::span<const char> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return mix(h);
}

}  // namespace graphmill::rng

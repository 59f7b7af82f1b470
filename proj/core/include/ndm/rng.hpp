#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ndm {

using Rng = std::mt19937_64;

// FNV-1a; stable across platforms so stream seeds never depend on std::hash.
constexpr std::uint64_t stable_hash(std::string_view s) noexcept {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

// One seeded generator per run, split into independent named streams so that
// adding draws in one module never perturbs another.
inline Rng make_stream(std::uint64_t seed, std::string_view stream) {
  const std::uint64_t tag = stable_hash(stream);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  return Rng(seq);
}

}  // namespace ndm
